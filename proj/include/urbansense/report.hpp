#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbansense/assessor.hpp"
#include "urbansense/evalstudy.hpp"
#include "urbansense/numstat.hpp"
#include "urbansense/textmine.hpp"

namespace urbansense::report {

/// Score distributions of one description over both groups.
struct DistributionEntry {
    std::string description;
    std::string direction;
    std::pair<double, double> range;
    numstat::DistributionSummary group_a;
    numstat::DistributionSummary group_b;
};

struct PairReport {
    std::string pair;  // "city:period vs city:period"
    std::vector<assess::ScoredDescription> descriptions;  // every assessed candidate
    std::vector<assess::ScoredDescription> ranked;        // significant, best first
    assess::PassRate pass_rate;
    std::vector<DistributionEntry> distributions;  // top description per direction
};

struct ClusterPoint {
    std::string doc_id;
    std::string text;
    double x = 0, y = 0;
    std::size_t cluster = 0;
    std::string city;
    std::string period;
};

struct ClusterReport {
    std::size_t k = 0;
    std::uint64_t seed = 0;
    double purity = 0.0;
    double inertia = 0.0;
    std::array<double, 2> explained_variance{};
    std::vector<ClusterPoint> points;
    std::vector<std::string> warnings;
};

struct WordFrequencyReport {
    std::string group;  // "city:period"
    std::vector<textmine::TermCount> terms;
    std::vector<std::string> dropped;  // generic terms shared with the other groups
};

struct RunReport {
    std::string run_id;
    std::string config_digest;
    double alpha = 0.05;
    std::vector<PairReport> pairs;
    std::optional<ClusterReport> clusters;
    std::vector<WordFrequencyReport> word_frequencies;
    std::optional<study::StudyResults> study;
    std::vector<std::string> notes;
};

struct AnalyzeOptions {
    double alpha = 0.05;
    std::size_t k = 4;
    std::uint64_t seed = 0;
    std::size_t kmeans_restarts = 10;
    std::size_t bins = 20;
    std::size_t kde_points = 101;
    std::size_t top_terms = 50;
    double contrast_fraction = 0.2;
};

/// Builds the analysis for assessed descriptions, one entry per comparison pair (keyed by
/// candidate.pair, in first-seen order). Clustering uses TF-IDF, PCA to 2-D, then k-means in
/// the PCA plane; each description is labelled with the category it describes.
RunReport analyze(const std::vector<assess::ScoredDescription>& scored, const AnalyzeOptions& options);

/// "Beijing:old vs Beijing:new" -> "beijing-old-vs-beijing-new".
std::string slug(std::string_view label);

nlohmann::json to_json(const RunReport& r);

struct EmitFormats {
    bool json = true;
    bool csv = true;
};

/// Writes the report files atomically and returns their names relative to out_dir, sorted.
std::vector<std::string> emit(const RunReport& report, const std::filesystem::path& out_dir, EmitFormats formats = {});

// Individual file bodies, exposed for tests.
std::string format_pass_rate_csv(const RunReport& r);
std::string format_histogram_csv(const PairReport& p);
std::string format_kde_csv(const PairReport& p);
std::string format_box_csv(const PairReport& p);
std::string format_clusters_csv(const ClusterReport& c);

}  // namespace urbansense::report
