#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "urbansense/assessor.hpp"
#include "urbansense/config.hpp"
#include "urbansense/corpus.hpp"
#include "urbansense/discoverer.hpp"
#include "urbansense/evalstudy.hpp"
#include "urbansense/mock.hpp"
#include "urbansense/report.hpp"

namespace urbansense::app {

/// A corpus file: JSON written by `ingest`, or a CSV/JSONL manifest whose relative image
/// paths resolve against the manifest's directory.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// The configured provider clients sharing one counting transport and one response cache.
/// mock:// endpoints are served in-process; the mock sees each manifest caption as the
/// content of its image.
class ProviderSet {
public:
    /// `transport` replaces the real transport for every role (tests).
    ProviderSet(const RunConfig& config, const Corpus* corpus, std::shared_ptr<providers::Transport> transport = nullptr);

    providers::ProviderClient* captioner() const { return captioner_.get(); }
    providers::ProviderClient* embedder() const { return embedder_.get(); }
    providers::ProviderClient* judge() const { return judge_.get(); }

    /// Throws MissingProvider naming the role and what needed it.
    providers::ProviderClient& require(providers::ProviderKind kind, const std::string& purpose) const;

    std::size_t network_calls() const { return counter_->calls(); }
    const PromptSet& prompts() const { return prompts_; }

private:
    std::shared_ptr<providers::CountingTransport> counter_;
    std::shared_ptr<providers::MockBackend> mock_;
    std::unique_ptr<providers::ProviderClient> captioner_, embedder_, judge_;
    PromptSet prompts_;
};

discover::Proposals discover_pair(const Corpus& corpus, const std::string& pair, const RunConfig& config,
                                  const ProviderSet& providers);

std::vector<assess::ScoredDescription> assess_candidates(const Corpus& corpus,
                                                         const std::vector<discover::CandidateDescription>& candidates,
                                                         const RunConfig& config, const ProviderSet& providers);

/// Significant descriptions of every pair, each pair ranked best first, pairs in input order.
std::vector<assess::ScoredDescription> ranked_all(const std::vector<assess::ScoredDescription>& scored, double alpha);

struct RunResult {
    report::RunReport report;
    std::vector<std::string> report_files;  // relative to out_dir/report
    std::size_t network_calls = 0;
    std::optional<std::filesystem::path> study_path;
};

/// ingest -> discover -> assess -> analyze -> report (-> study build) for every configured pair.
/// Writes corpus.json, pairs/<slug>/{candidates.jsonl,scored.jsonl,scored.csv}, report/ and
/// optionally study.json under out_dir.
RunResult run_pipeline(const RunConfig& config, std::shared_ptr<providers::Transport> transport = nullptr);

}  // namespace urbansense::app
