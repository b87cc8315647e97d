#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbansense/corpus.hpp"
#include "urbansense/discoverer.hpp"
#include "urbansense/embedding.hpp"
#include "urbansense/providers.hpp"

namespace urbansense::assess {

enum class Scorer { Feature, ImageJudge, CaptionJudge };

const char* to_string(Scorer s) noexcept;
Scorer scorer_from_string(std::string_view s);

struct ScoredDescription {
    discover::CandidateDescription candidate;
    Scorer scorer = Scorer::Feature;
    bool scored = false;
    std::string error;  // why a candidate is unscored

    std::vector<double> scores_a;  // per image of the full group A, in group order
    std::vector<double> scores_b;
    double d_y = 0.0;
    double auroc = 0.5;
    double t_stat = 0.0;
    double df = 0.0;
    double p_value = 1.0;
    bool degenerate = false;  // both groups constant with different means
    bool significant = false;
};

nlohmann::json to_json(const ScoredDescription& s);
ScoredDescription scored_from_json(const nlohmann::json& j);

std::string format_scored_jsonl(const std::vector<ScoredDescription>& s);
std::vector<ScoredDescription> parse_scored_jsonl(std::string_view text);

/// Header: text,direction,proposer,round,pair,scorer,scored,d_y,auroc,t,df,p,significant
std::string format_scored_csv(const std::vector<ScoredDescription>& s);

/// cosine(images[i], description) for each i. Throws Validation naming the first index
/// whose dim differs.
std::vector<double> score_feature(const std::vector<EmbeddingVector>& images, const EmbeddingVector& description);

/// Per-image 0/1 from the judge looking at the image.
std::vector<double> score_image_judge(const std::vector<providers::ImageRef>& images, const std::string& description,
                                      providers::ProviderClient& judge, const PromptSet& prompts);

/// Caption each image, then judge the caption against the description.
std::vector<double> score_caption_judge(const std::vector<providers::ImageRef>& images, const std::string& description,
                                        providers::ProviderClient& captioner, providers::ProviderClient& judge,
                                        const PromptSet& prompts);

/// mean(a) - mean(b). Throws EmptyInput when either side is empty.
double discriminative_score(std::span<const double> a, std::span<const double> b);

/// Fills d_y, auroc, Welch statistics and significance (p < alpha) from the two score lists.
ScoredDescription score_statistics(discover::CandidateDescription candidate, Scorer scorer, std::vector<double> scores_a,
                                   std::vector<double> scores_b, double alpha);

/// Feature scorer as a pure function of precomputed embeddings. descriptions[i] belongs to
/// candidates[i]; a missing entry marks that candidate unscored.
std::vector<ScoredDescription> assess_features(const std::vector<discover::CandidateDescription>& candidates,
                                               const std::vector<std::optional<EmbeddingVector>>& descriptions,
                                               const std::vector<EmbeddingVector>& images_a,
                                               const std::vector<EmbeddingVector>& images_b, double alpha);

struct AssessContext {
    Scorer scorer = Scorer::Feature;
    double alpha = 0.05;
    providers::ProviderClient* embedder = nullptr;   // feature scorer
    providers::ProviderClient* captioner = nullptr;  // caption-judge scorer
    providers::ProviderClient* judge = nullptr;      // judge scorers
    PromptSet prompts = PromptSet::defaults();
};

/// Scores every candidate over the FULL groups. Provider failures are recorded on the
/// affected candidates, which are marked unscored; authentication failures abort.
/// Output order equals candidate order.
std::vector<ScoredDescription> assess(const std::vector<discover::CandidateDescription>& candidates,
                                      const std::vector<ImageRecord>& group_a, const std::vector<ImageRecord>& group_b,
                                      const AssessContext& ctx);

/// Keeps scored entries with p < alpha, sorted by auroc desc, |d_y| desc, text asc;
/// truncated to top_k when given.
std::vector<ScoredDescription> rank_and_filter(const std::vector<ScoredDescription>& scored, double alpha = 0.05,
                                               std::optional<std::size_t> top_k = std::nullopt);

struct PassRate {
    std::size_t significant = 0;
    std::size_t scored = 0;
    double rate = 0.0;  // significant / scored; 0 when nothing was scored
};

PassRate pass_rate(const std::vector<ScoredDescription>& scored);

}  // namespace urbansense::assess
