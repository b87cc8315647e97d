#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbansense/assessor.hpp"
#include "urbansense/discoverer.hpp"
#include "urbansense/mock.hpp"
#include "urbansense/providers.hpp"
#include "urbansense/report.hpp"

namespace urbansense::app {

struct DiscoverSettings {
    std::vector<discover::Proposer> proposers{discover::Proposer::Caption};
    std::uint32_t rounds = 3;
    std::size_t subset_size = 20;
    std::size_t k = 5;
    bool resample = true;
    bool dedup = true;
    std::size_t neighbors = 10;
    std::optional<std::filesystem::path> phrase_bank;  // one phrase per line
};

struct AssessSettings {
    assess::Scorer scorer = assess::Scorer::Feature;
    double alpha = 0.05;
    std::optional<std::size_t> top_k;
};

struct StudySettings {
    bool build = false;
    std::string study_id = "study";
    std::size_t category_tasks = 8;
    std::size_t sets = 8;
    std::size_t per_side = 25;
};

struct RunConfig {
    std::string run_id = "run";
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    std::optional<std::filesystem::path> cache_dir;  // default: out_dir/cache
    std::optional<std::filesystem::path> prompts_dir;
    std::vector<std::string> pairs;

    std::filesystem::path manifest;

    std::optional<providers::ProviderConfig> captioner;
    std::optional<providers::ProviderConfig> embedder;
    std::optional<providers::ProviderConfig> judge;

    providers::MockOptions mock;

    DiscoverSettings discover;
    AssessSettings assess;
    report::AnalyzeOptions analyze;
    StudySettings study;

    std::filesystem::path effective_cache_dir() const { return cache_dir ? *cache_dir : out_dir / "cache"; }
    /// Throws Validation naming the offending key.
    void validate() const;
};

/// Parses TOML. Relative paths resolve against base_dir. Unknown keys are rejected.
RunConfig parse_config(std::string_view toml_text, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

/// The resolved configuration, minus output locations (they do not change results).
nlohmann::json to_json(const RunConfig& c);
std::string config_digest(const RunConfig& c);

}  // namespace urbansense::app
