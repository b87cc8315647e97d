#include "urbansense/cli.hpp"

#include <functional>
#include <iostream>

#include <CLI11.hpp>

#include "urbansense/config.hpp"
#include "urbansense/error.hpp"
#include "urbansense/evalstudy.hpp"
#include "urbansense/io.hpp"
#include "urbansense/log.hpp"
#include "urbansense/pipeline.hpp"
#include "urbansense/synth.hpp"

namespace urbansense::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Options shared by the commands that call providers.
struct ProviderFlags {
    std::string config;
    bool mock = false;
    std::string cache_dir;

    void add(CLI::App* cmd) {
        cmd->add_option("--config", config, "TOML config supplying providers and defaults");
        cmd->add_flag("--mock", mock, "Use the in-process mock for every unconfigured provider role");
        cmd->add_option("--cache-dir", cache_dir, "Response cache directory (default .urbansense-cache)");
    }

    RunConfig resolve() const {
        RunConfig c;
        if (!config.empty()) c = load_config(config);
        if (mock) {
            auto fill = [](std::optional<providers::ProviderConfig>& p, providers::ProviderKind kind) {
                if (p) return;
                p.emplace();
                p->kind = kind;
                p->endpoint = "mock://";
                p->model = std::string("mock-") + providers::to_string(kind);
            };
            fill(c.captioner, providers::ProviderKind::Captioner);
            fill(c.embedder, providers::ProviderKind::Embedder);
            fill(c.judge, providers::ProviderKind::Judge);
        }
        if (!cache_dir.empty()) c.cache_dir = fs::path(cache_dir);
        else if (config.empty()) c.cache_dir = fs::path(".urbansense-cache");
        return c;
    }
};

void write_or_print(const std::string& path, const std::string& body, std::ostream& out) {
    if (path.empty() || path == "-") out << body;
    else io::write_file_atomic(path, body);
}

std::vector<assess::ScoredDescription> read_scored(const std::vector<std::string>& files) {
    std::vector<assess::ScoredDescription> all;
    for (const auto& f : files) {
        auto s = assess::parse_scored_jsonl(io::read_file(f));
        all.insert(all.end(), s.begin(), s.end());
    }
    return all;
}

json pass_rates_json(const std::vector<assess::ScoredDescription>& scored) {
    std::map<std::string, std::vector<assess::ScoredDescription>> by_pair;
    for (const auto& s : scored) by_pair[s.candidate.pair].push_back(s);
    json out = json::object();
    for (const auto& [pair, s] : by_pair) {
        const auto r = assess::pass_rate(s);
        out[pair] = {{"significant", r.significant}, {"scored", r.scored}, {"rate", r.rate}};
    }
    return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Set-difference captioning for urban imagery"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "urbansense 0.1.0");
    std::function<void()> action;

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate a manifest and write a corpus file");
    std::string manifest, corpus_out;
    ingest->add_option("--manifest", manifest, "CSV or JSONL manifest")->required();
    ingest->add_option("--out", corpus_out, "Corpus JSON output")->required();
    ingest->callback([&] {
        action = [&] {
            const auto corpus = load_corpus(manifest);
            save_corpus(corpus, corpus_out);
            out << json{{"images", corpus.records().size()}, {"categories", corpus.label_space().size()}}.dump() << "\n";
        };
    });

    // discover
    auto* disc = app.add_subcommand("discover", "Propose candidate descriptions for one comparison pair");
    ProviderFlags disc_flags;
    disc_flags.add(disc);
    std::string disc_corpus, disc_pair, disc_out;
    std::vector<std::string> disc_proposers;
    std::optional<std::uint32_t> disc_rounds;
    std::optional<std::size_t> disc_k, disc_subset;
    std::optional<std::uint64_t> disc_seed;
    bool no_dedup = false;
    disc->add_option("--corpus", disc_corpus, "Corpus JSON or manifest")->required();
    disc->add_option("--pair", disc_pair, "\"cityA:periodA vs cityB:periodB\"")->required();
    disc->add_option("--proposer", disc_proposers, "caption | grid | embedding (repeatable)");
    disc->add_option("--rounds", disc_rounds, "Proposer rounds");
    disc->add_option("--k", disc_k, "Candidates per direction per round");
    disc->add_option("--subset-size", disc_subset, "Images per subset per round");
    disc->add_option("--seed", disc_seed, "Root seed");
    disc->add_flag("--no-dedup", no_dedup, "Keep duplicate candidates");
    disc->add_option("--out", disc_out, "Candidates JSONL (default stdout)");
    disc->callback([&] {
        action = [&] {
            auto c = disc_flags.resolve();
            if (!disc_proposers.empty()) {
                c.discover.proposers.clear();
                for (const auto& p : disc_proposers) c.discover.proposers.push_back(discover::proposer_from_string(p));
            }
            if (disc_rounds) c.discover.rounds = *disc_rounds;
            if (disc_k) c.discover.k = *disc_k;
            if (disc_subset) c.discover.subset_size = *disc_subset;
            if (disc_seed) c.seed = *disc_seed;
            if (no_dedup) c.discover.dedup = false;
            const auto corpus = load_corpus(disc_corpus);
            ProviderSet ps(c, &corpus);
            const auto proposals = discover_pair(corpus, disc_pair, c, ps);
            for (const auto& n : proposals.notes) log::warn(n);
            write_or_print(disc_out, discover::format_candidates_jsonl(proposals.candidates), out);
        };
    });

    // assess
    auto* ass = app.add_subcommand("assess", "Score candidate descriptions over the full groups");
    ProviderFlags ass_flags;
    ass_flags.add(ass);
    std::string ass_candidates, ass_corpus, ass_scorer, ass_out, ass_csv;
    std::optional<double> ass_alpha;
    ass->add_option("--candidates", ass_candidates, "Candidates JSONL")->required();
    ass->add_option("--corpus", ass_corpus, "Corpus JSON or manifest")->required();
    ass->add_option("--scorer", ass_scorer, "feature | image-judge | caption-judge");
    ass->add_option("--alpha", ass_alpha, "Significance level");
    ass->add_option("--out", ass_out, "Scored JSONL")->required();
    ass->add_option("--csv", ass_csv, "Scored CSV (default: --out with .csv)");
    ass->callback([&] {
        action = [&] {
            auto c = ass_flags.resolve();
            if (!ass_scorer.empty()) c.assess.scorer = assess::scorer_from_string(ass_scorer);
            if (ass_alpha) c.assess.alpha = *ass_alpha;
            if (!(c.assess.alpha > 0.0 && c.assess.alpha <= 1.0))
                throw Error(ErrorKind::Validation, "--alpha must lie in (0, 1]");
            const auto corpus = load_corpus(ass_corpus);
            const auto candidates = discover::parse_candidates_jsonl(io::read_file(ass_candidates));
            ProviderSet ps(c, &corpus);
            const auto scored = assess_candidates(corpus, candidates, c, ps);
            io::write_file_atomic(ass_out, assess::format_scored_jsonl(scored));
            io::write_file_atomic(ass_csv.empty() ? fs::path(ass_out).replace_extension(".csv") : fs::path(ass_csv),
                                  assess::format_scored_csv(scored));
            out << pass_rates_json(scored).dump() << "\n";
        };
    });

    // analyze
    auto* ana = app.add_subcommand("analyze", "Clusters, word frequencies and distributions -> report files");
    std::vector<std::string> ana_scored;
    std::string ana_out, ana_run_id = "analysis", ana_study, ana_log;
    report::AnalyzeOptions ana_opt;
    ana->add_option("--scored", ana_scored, "Scored JSONL files")->required()->expected(1, -1);
    ana->add_option("--k", ana_opt.k, "k-means clusters")->capture_default_str();
    ana->add_option("--seed", ana_opt.seed, "k-means root seed")->capture_default_str();
    ana->add_option("--alpha", ana_opt.alpha, "Significance level")->capture_default_str();
    ana->add_option("--bins", ana_opt.bins, "Histogram bins")->capture_default_str();
    ana->add_option("--top-terms", ana_opt.top_terms, "Terms per word-frequency list")->capture_default_str();
    ana->add_option("--run-id", ana_run_id, "Run id recorded in the report")->capture_default_str();
    ana->add_option("--study", ana_study, "Study definition whose results to include");
    ana->add_option("--log", ana_log, "Response log of --study");
    ana->add_option("--out", ana_out, "Report directory")->required();
    ana->callback([&] {
        action = [&] {
            auto r = report::analyze(read_scored(ana_scored), ana_opt);
            r.run_id = ana_run_id;
            if (!ana_study.empty()) {
                const auto s = study::load_study(ana_study);
                const auto log = ana_log.empty() ? fs::path(ana_study).replace_extension(".responses.jsonl") : fs::path(ana_log);
                r.study = study::aggregate(s, study::read_log(log));
            }
            const auto files = report::emit(r, ana_out);
            out << json{{"files", files}}.dump() << "\n";
        };
    });

    // study
    auto* st = app.add_subcommand("study", "Human evaluation study");
    st->require_subcommand(1);
    auto* sb = st->add_subcommand("build", "Build a study definition");
    std::string sb_corpus, sb_out, sb_id = "study";
    std::vector<std::string> sb_scored;
    std::size_t sb_sets = 8, sb_per_side = 25, sb_tasks = 8;
    std::uint64_t sb_seed = 0;
    double sb_alpha = 0.05;
    sb->add_option("--corpus", sb_corpus, "Corpus JSON or manifest")->required();
    sb->add_option("--scored", sb_scored, "Scored JSONL files")->required()->expected(1, -1);
    sb->add_option("--sets", sb_sets, "Matching sets")->capture_default_str();
    sb->add_option("--per-side", sb_per_side, "Images per side per set")->capture_default_str();
    sb->add_option("--category-tasks", sb_tasks, "Category identification tasks")->capture_default_str();
    sb->add_option("--seed", sb_seed, "Seed")->capture_default_str();
    sb->add_option("--alpha", sb_alpha, "Significance level for eligible descriptions")->capture_default_str();
    sb->add_option("--id", sb_id, "Study id")->capture_default_str();
    sb->add_option("--out", sb_out, "Study definition JSON")->required();
    sb->callback([&] {
        action = [&] {
            const auto corpus = load_corpus(sb_corpus);
            const auto s = study::build_study(sb_id, corpus, ranked_all(read_scored(sb_scored), sb_alpha), sb_tasks,
                                              sb_sets, sb_per_side, sb_seed);
            study::save_study(s, sb_out);
            std::size_t items = s.category_tasks.size();
            for (const auto& m : s.matching_sets) items += m.image_ids.size();
            out << json{{"study_id", s.study_id}, {"items", items}}.dump() << "\n";
        };
    });
    auto* ss = st->add_subcommand("serve", "Serve a study over HTTP");
    std::string ss_study, ss_ui, ss_log, ss_host = "127.0.0.1";
    int ss_port = 8080;
    ss->add_option("--study", ss_study, "Study definition JSON")->required();
    ss->add_option("--port", ss_port, "Port (0 picks a free one)")->capture_default_str();
    ss->add_option("--host", ss_host, "Bind address")->capture_default_str();
    ss->add_option("--ui-dir", ss_ui, "Static participant UI to mount at /");
    ss->add_option("--log", ss_log, "Response log (default <study>.responses.jsonl)");
    ss->callback([&] {
        action = [&] {
            const auto log = ss_log.empty() ? fs::path(ss_study).replace_extension(".responses.jsonl") : fs::path(ss_log);
            std::optional<fs::path> ui;
            if (!ss_ui.empty()) ui = ss_ui;
            study::StudyService service(study::load_study(ss_study), log, ui);
            log::info("study: serving on " + ss_host + ":" + std::to_string(ss_port) + ", log " + log.string());
            service.run(ss_host, ss_port);
        };
    });
    auto* sr = st->add_subcommand("results", "Aggregate a study's response log");
    std::string sr_study, sr_log, sr_csv;
    sr->add_option("--study", sr_study, "Study definition JSON")->required();
    sr->add_option("--log", sr_log, "Response log (default <study>.responses.jsonl)");
    sr->add_option("--csv", sr_csv, "Also write the results as CSV");
    sr->callback([&] {
        action = [&] {
            const auto s = study::load_study(sr_study);
            const auto log = sr_log.empty() ? fs::path(sr_study).replace_extension(".responses.jsonl") : fs::path(sr_log);
            const auto r = study::aggregate(s, study::read_log(log));
            if (!sr_csv.empty()) io::write_file_atomic(sr_csv, study::format_results_csv(r));
            out << study::to_json(r).dump(2) << "\n";
        };
    });

    // run
    auto* run = app.add_subcommand("run", "Full pipeline for every configured pair");
    std::string run_config, run_out, run_scorer;
    std::optional<std::uint64_t> run_seed;
    std::optional<double> run_alpha;
    std::optional<std::uint32_t> run_rounds;
    std::optional<std::size_t> run_k;
    run->add_option("--config", run_config, "TOML config")->required();
    run->add_option("--seed", run_seed, "Override the root seed");
    run->add_option("--out", run_out, "Override out_dir");
    run->add_option("--scorer", run_scorer, "Override assess.scorer");
    run->add_option("--alpha", run_alpha, "Override assess.alpha");
    run->add_option("--rounds", run_rounds, "Override discover.rounds");
    run->add_option("--k", run_k, "Override discover.k");
    run->callback([&] {
        action = [&] {
            auto c = load_config(run_config);
            if (run_seed) c.seed = c.analyze.seed = *run_seed;
            if (!run_out.empty()) c.out_dir = fs::absolute(run_out);
            if (!run_scorer.empty()) c.assess.scorer = assess::scorer_from_string(run_scorer);
            if (run_alpha) c.assess.alpha = c.analyze.alpha = *run_alpha;
            if (run_rounds) c.discover.rounds = *run_rounds;
            if (run_k) c.discover.k = *run_k;
            const auto r = run_pipeline(c);
            json rates = json::object();
            for (const auto& p : r.report.pairs)
                rates[p.pair] = {{"significant", p.pass_rate.significant}, {"scored", p.pass_rate.scored},
                                 {"rate", p.pass_rate.rate}};
            out << json{{"run_id", r.report.run_id},
                        {"out_dir", c.out_dir.string()},
                        {"pass_rates", rates},
                        {"network_calls", r.network_calls},
                        {"report_files", r.report_files}}
                       .dump(2)
                << "\n";
        };
    });

    // synth
    auto* syn = app.add_subcommand("synth", "Write the synthetic fixture (images, manifest, mock config)");
    std::string syn_out;
    SynthOptions syn_opt;
    syn->add_option("--out", syn_out, "Fixture directory")->required();
    syn->add_option("--per-category", syn_opt.per_category, "Images per category")->capture_default_str();
    syn->add_option("--seed", syn_opt.seed, "Seed")->capture_default_str();
    syn->callback([&] {
        action = [&] {
            const auto f = write_synthetic_fixture(syn_out, syn_opt);
            out << json{{"manifest", f.manifest.string()}, {"config", f.config.string()}}.dump() << "\n";
        };
    });

    // CLI11 consumes a reversed argument list without the program name.
    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << "urbansense 0.1.0\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code(ErrorKind::Validation);
    }

    try {
        if (action) action();
        return 0;
    } catch (const JudgeParseError& e) {
        err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\nraw reply: " << e.raw() << "\n";
        return exit_code(e.kind());
    } catch (const Error& e) {
        err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error [io]: " << e.what() << "\n";
        return exit_code(ErrorKind::Io);
    } catch (const std::exception& e) {
        err << "error [internal]: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace urbansense::app
