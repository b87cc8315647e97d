#include "urbansense/pipeline.hpp"

#include <map>

#include "urbansense/error.hpp"
#include "urbansense/io.hpp"
#include "urbansense/log.hpp"
#include "urbansense/rng.hpp"

namespace urbansense::app {

namespace fs = std::filesystem;
using providers::ProviderKind;

Corpus load_corpus(const fs::path& path) {
    if (path.extension() == ".json") {
        try {
            return corpus_from_json(nlohmann::json::parse(io::read_file(path)));
        } catch (const nlohmann::json::parse_error&) {
            throw Error(ErrorKind::Validation, "corpus file is not JSON: " + path.string());
        }
    }
    auto base = path.parent_path();
    if (base.empty()) base = ".";
    return resolve_paths(load_manifest(path), fs::absolute(base));
}

void save_corpus(const Corpus& corpus, const fs::path& path) {
    io::write_file_atomic(path, to_json(corpus).dump(2) + "\n");
}

namespace {

// Sends mock:// requests to the in-process backend and everything else over HTTP.
class RoutingTransport : public providers::Transport {
public:
    RoutingTransport(std::shared_ptr<providers::Transport> mock, std::shared_ptr<providers::Transport> http)
        : mock_(std::move(mock)), http_(std::move(http)) {}

    providers::HttpResponse post(const providers::HttpRequest& r) override {
        if (r.url.rfind("mock:", 0) == 0) {
            if (!mock_) throw Error(ErrorKind::Internal, "mock endpoint without a mock backend");
            return mock_->post(r);
        }
        return http_->post(r);
    }

private:
    std::shared_ptr<providers::Transport> mock_, http_;
};

}  // namespace

ProviderSet::ProviderSet(const RunConfig& config, const Corpus* corpus, std::shared_ptr<providers::Transport> transport)
    : prompts_(config.prompts_dir ? PromptSet::load(*config.prompts_dir) : PromptSet::defaults()) {
    const bool any_mock = (config.captioner && config.captioner->is_mock()) ||
                          (config.embedder && config.embedder->is_mock()) || (config.judge && config.judge->is_mock());
    if (!transport) {
        if (any_mock) {
            mock_ = std::make_shared<providers::MockBackend>(config.mock);
            if (corpus)
                for (const auto& r : corpus->records())
                    if (r.caption) mock_->register_image_content(providers::image_digest({r.id, r.path}), *r.caption);
        }
        transport = std::make_shared<RoutingTransport>(mock_, providers::make_http_transport());
    }
    counter_ = std::make_shared<providers::CountingTransport>(std::move(transport));

    const auto cache = std::make_shared<providers::ResponseCache>(config.effective_cache_dir());
    auto make = [&](const std::optional<providers::ProviderConfig>& c, const char* name) {
        std::unique_ptr<providers::ProviderClient> out;
        if (c) {
            out = std::make_unique<providers::ProviderClient>(*c, counter_, cache);
            out->set_name(name);
        }
        return out;
    };
    captioner_ = make(config.captioner, "captioner");
    embedder_ = make(config.embedder, "embedder");
    judge_ = make(config.judge, "judge");
}

providers::ProviderClient& ProviderSet::require(ProviderKind kind, const std::string& purpose) const {
    auto* p = kind == ProviderKind::Captioner ? captioner_.get() : kind == ProviderKind::Embedder ? embedder_.get()
                                                                                                  : judge_.get();
    if (!p)
        throw Error(ErrorKind::MissingProvider, std::string("no [providers.") + providers::to_string(kind) +
                                                    "] configured; " + purpose + " needs one");
    return *p;
}

discover::Proposals discover_pair(const Corpus& corpus, const std::string& pair_text, const RunConfig& config,
                                  const ProviderSet& ps) {
    const auto pair = parse_pair(pair_text);
    const auto groups = partition(corpus, pair.a, pair.b);
    const auto& d = config.discover;
    const auto rounds =
        discover::make_rounds(groups, d.subset_size, d.rounds, derive_seed(config.seed, "discover:" + pair.label()), d.resample);

    discover::ProposeOptions opt;
    opt.k = d.k;
    opt.prompts = ps.prompts();
    opt.pair_label = pair.label();

    discover::Proposals all;
    auto take = [&](discover::Proposals p) {
        all.candidates.insert(all.candidates.end(), p.candidates.begin(), p.candidates.end());
        all.notes.insert(all.notes.end(), p.notes.begin(), p.notes.end());
    };
    for (auto proposer : d.proposers) {
        switch (proposer) {
            case discover::Proposer::Caption: {
                auto& captioner = ps.require(ProviderKind::Captioner, "the caption proposer");
                auto& text_model = ps.require(ProviderKind::Judge, "the caption proposer (text model)");
                take(discover::propose_via_captions(rounds, captioner, text_model, opt));
                break;
            }
            case discover::Proposer::Grid:
                take(discover::propose_via_grid(rounds, ps.require(ProviderKind::Captioner, "the grid proposer"), opt));
                break;
            case discover::Proposer::Embedding: {
                discover::EmbeddingProposeOptions eopt;
                eopt.neighbors = d.neighbors;
                if (d.phrase_bank) eopt.phrase_bank = io::read_lines(*d.phrase_bank);
                auto& embedder = ps.require(ProviderKind::Embedder, "the embedding proposer");
                auto& text_model = ps.require(ProviderKind::Judge, "the embedding proposer (text model)");
                take(discover::propose_via_embeddings(rounds, embedder, text_model, opt, eopt));
                break;
            }
        }
    }
    if (d.dedup) {
        discover::TextEmbedFn embed;
        if (auto* e = ps.embedder()) embed = [e](const std::string& t) { return providers::embed_text(*e, t); };
        all.candidates = discover::dedup(all.candidates, embed);
    }
    return all;
}

std::vector<assess::ScoredDescription> assess_candidates(const Corpus& corpus,
                                                         const std::vector<discover::CandidateDescription>& candidates,
                                                         const RunConfig& config, const ProviderSet& ps) {
    assess::AssessContext ctx;
    ctx.scorer = config.assess.scorer;
    ctx.alpha = config.assess.alpha;
    ctx.embedder = ps.embedder();
    ctx.captioner = ps.captioner();
    ctx.judge = ps.judge();
    ctx.prompts = ps.prompts();

    // Candidates may mix pairs; each pair is scored against its own full groups.
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::size_t>> by_pair;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!by_pair.count(candidates[i].pair)) order.push_back(candidates[i].pair);
        by_pair[candidates[i].pair].push_back(i);
    }
    std::vector<assess::ScoredDescription> out(candidates.size());
    for (const auto& label : order) {
        const auto pair = parse_pair(label);
        const auto groups = partition(corpus, pair.a, pair.b);
        std::vector<discover::CandidateDescription> mine;
        for (auto i : by_pair[label]) mine.push_back(candidates[i]);
        auto scored = assess::assess(mine, groups.group_a, groups.group_b, ctx);
        for (std::size_t j = 0; j < scored.size(); ++j) out[by_pair[label][j]] = std::move(scored[j]);
    }
    return out;
}

std::vector<assess::ScoredDescription> ranked_all(const std::vector<assess::ScoredDescription>& scored, double alpha) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<assess::ScoredDescription>> by_pair;
    for (const auto& s : scored) {
        if (!by_pair.count(s.candidate.pair)) order.push_back(s.candidate.pair);
        by_pair[s.candidate.pair].push_back(s);
    }
    std::vector<assess::ScoredDescription> out;
    for (const auto& label : order) {
        auto r = assess::rank_and_filter(by_pair[label], alpha);
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

RunResult run_pipeline(const RunConfig& config, std::shared_ptr<providers::Transport> transport) {
    config.validate();
    const auto corpus = load_corpus(config.manifest);
    save_corpus(corpus, config.out_dir / "corpus.json");
    // Fail on bad pair labels before spending any provider calls.
    for (const auto& p : config.pairs) {
        const auto pair = parse_pair(p);
        partition(corpus, pair.a, pair.b);
    }

    ProviderSet ps(config, &corpus, std::move(transport));
    std::vector<assess::ScoredDescription> all;
    std::vector<std::string> notes;
    for (const auto& label : config.pairs) {
        const auto canonical = parse_pair(label).label();
        const auto dir = config.out_dir / "pairs" / report::slug(canonical);
        log::info("discover: " + canonical);
        auto proposals = discover_pair(corpus, label, config, ps);
        io::write_file_atomic(dir / "candidates.jsonl", discover::format_candidates_jsonl(proposals.candidates));
        for (const auto& n : proposals.notes) notes.push_back(canonical + ": " + n);

        log::info("assess: " + canonical + " (" + std::to_string(proposals.candidates.size()) + " candidates)");
        auto scored = assess_candidates(corpus, proposals.candidates, config, ps);
        io::write_file_atomic(dir / "scored.jsonl", assess::format_scored_jsonl(scored));
        io::write_file_atomic(dir / "scored.csv", assess::format_scored_csv(scored));
        const auto rate = assess::pass_rate(scored);
        log::info("assess: " + canonical + " pass rate " + std::to_string(rate.significant) + "/" +
                  std::to_string(rate.scored));
        all.insert(all.end(), scored.begin(), scored.end());
    }

    RunResult result;
    result.report = report::analyze(all, config.analyze);
    result.report.run_id = config.run_id;
    result.report.config_digest = config_digest(config);
    result.report.notes.insert(result.report.notes.begin(), notes.begin(), notes.end());
    if (config.assess.top_k)
        for (auto& p : result.report.pairs)
            if (p.ranked.size() > *config.assess.top_k) p.ranked.resize(*config.assess.top_k);

    if (config.study.build) {
        const auto& s = config.study;
        const auto study = study::build_study(s.study_id, corpus, ranked_all(all, config.assess.alpha),
                                              s.category_tasks, s.sets, s.per_side, derive_seed(config.seed, "study"));
        result.study_path = config.out_dir / "study.json";
        study::save_study(study, *result.study_path);
    }
    result.report_files = report::emit(result.report, config.out_dir / "report");
    result.network_calls = ps.network_calls();
    return result;
}

}  // namespace urbansense::app
