#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbansense/assessor.hpp"
#include "urbansense/corpus.hpp"

namespace urbansense::study {

enum class ParticipantGroup { Professional, NonProfessional };
const char* to_string(ParticipantGroup g) noexcept;
ParticipantGroup participant_group_from_string(std::string_view s);

struct CategoryTask {
    std::string task_id;
    std::string image_id;
    std::vector<Label> choices;
    Label ground_truth;
};

struct MatchingSet {
    std::string set_id;
    std::string pair;
    std::string dimension;  // "city", "period" or "mixed": what the two sides differ in
    std::vector<std::string> image_ids;  // display order
    std::string description_1;           // describes side A
    std::string description_2;           // describes side B
    std::map<std::string, int> ground_truth;  // image id -> 1 | 2
};

struct Study {
    std::string study_id;
    std::vector<CategoryTask> category_tasks;
    std::vector<MatchingSet> matching_sets;
    std::map<std::string, std::string> image_paths;  // image id -> file
};

nlohmann::json to_json(const Study& s);
Study study_from_json(const nlohmann::json& j);
Study load_study(const std::filesystem::path& path);
void save_study(const Study& s, const std::filesystem::path& path);

/// n images stratified evenly over the corpus categories (the first n mod |categories|
/// categories in sorted order get one extra), then shuffled. Deterministic in seed.
std::vector<CategoryTask> build_category_tasks(const Corpus& corpus, std::size_t n, std::uint64_t seed);

/// Sets cycle through the comparison pairs found in `ranked`. Side A is described by the
/// best significant description with d_y > 0, side B by the most negative-auroc significant
/// description with d_y < 0. per_side images are sampled from each side and shuffled.
std::vector<MatchingSet> build_matching_sets(const Corpus& corpus, const std::vector<assess::ScoredDescription>& ranked,
                                             std::size_t sets, std::size_t per_side, std::uint64_t seed);

Study build_study(std::string study_id, const Corpus& corpus, const std::vector<assess::ScoredDescription>& ranked,
                  std::size_t category_tasks, std::size_t sets, std::size_t per_side, std::uint64_t seed);

struct CategoryResponse {
    Label predicted;
    Label truth;
};

/// Share of responses with both city and period right. Throws EmptyInput for no responses.
double accuracy_total(const std::vector<CategoryResponse>& responses);

/// Rows are the true description (1/2), columns the predicted one.
struct ConfusionMatrix2x2 {
    long long a = 0;  // true 1, predicted 1
    long long b = 0;  // true 1, predicted 2
    long long c = 0;  // true 2, predicted 1
    long long d = 0;  // true 2, predicted 2

    long long total() const { return a + b + c + d; }
    friend bool operator==(const ConfusionMatrix2x2&, const ConfusionMatrix2x2&) = default;
};

struct MatchingResponse {
    std::string item_id;
    int predicted = 0;  // 1 | 2
};

/// Throws Validation for an item without ground truth or a prediction other than 1/2.
ConfusionMatrix2x2 confusion_2x2(const std::vector<MatchingResponse>& responses,
                                 const std::map<std::string, int>& ground_truth);

struct Phi {
    double value = 0.0;
    bool degenerate = false;  // a zero marginal; value is 0
};

Phi phi_coefficient(const ConfusionMatrix2x2& m);

// Item ids as shown to participants.
std::string category_item_id(const CategoryTask& t);
std::string matching_item_id(const MatchingSet& s, const std::string& image_id);

/// One line of the append-only response log.
struct LogEvent {
    enum class Type { Session, Response } type = Type::Session;
    std::string session_id;
    ParticipantGroup group = ParticipantGroup::NonProfessional;  // Session events
    std::string item_id;                                         // Response events
    nlohmann::json answer;
    std::string timestamp;
};

nlohmann::json to_json(const LogEvent& e);
LogEvent log_event_from_json(const nlohmann::json& j);

/// Reads a log, skipping a torn final line. Missing file -> empty log.
std::vector<LogEvent> read_log(const std::filesystem::path& path);

struct SetResult {
    std::string set_id;
    std::string dimension;
    ConfusionMatrix2x2 confusion;
    Phi phi;
};

struct GroupResults {
    std::size_t sessions = 0;
    std::size_t category_responses = 0;
    std::optional<double> accuracy;
    std::vector<SetResult> sets;
    std::map<std::string, double> phi_by_dimension;  // mean phi over sets with responses
};

struct StudyResults {
    std::string study_id;
    std::map<std::string, GroupResults> groups;  // keyed by participant group name
};

/// Pure function of the study and the response log.
StudyResults aggregate(const Study& study, const std::vector<LogEvent>& log);
nlohmann::json to_json(const StudyResults& r);
std::string format_results_csv(const StudyResults& r);

/// Participant-facing HTTP service. Ground truth never leaves the process.
class StudyService {
public:
    StudyService(Study study, std::filesystem::path log_path, std::optional<std::filesystem::path> ui_dir = {});
    ~StudyService();
    StudyService(const StudyService&) = delete;
    StudyService& operator=(const StudyService&) = delete;

    /// Binds (port 0 picks a free one) and serves on a background thread. Returns the port.
    int start(const std::string& host, int port);
    /// Serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

    StudyResults results() const;
    const Study& study() const noexcept;
    /// Opaque per-study key used in /images/{key}.
    std::string image_key(const std::string& image_id) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace urbansense::study
