#include "urbansense/report.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "urbansense/corpus.hpp"
#include "urbansense/error.hpp"
#include "urbansense/io.hpp"
#include "urbansense/log.hpp"

namespace urbansense::report {

using nlohmann::json;

std::string slug(std::string_view label) {
    std::string out;
    for (unsigned char ch : label) {
        if (std::isalnum(ch)) {
            out += static_cast<char>(std::tolower(ch));
        } else if (!out.empty() && out.back() != '-') {
            out += '-';
        }
    }
    while (!out.empty() && out.back() == '-') out.pop_back();
    return out.empty() ? "unnamed" : out;
}

namespace {

Selector described_selector(const assess::ScoredDescription& s) {
    const auto pair = parse_pair(s.candidate.pair);
    return s.candidate.direction == discover::Direction::DescribesA ? pair.a : pair.b;
}

std::optional<DistributionEntry> distribution_for(const assess::ScoredDescription& s, const AnalyzeOptions& o) {
    if (!s.scored || s.scores_a.empty() || s.scores_b.empty()) return std::nullopt;
    double lo = std::min(*std::min_element(s.scores_a.begin(), s.scores_a.end()),
                         *std::min_element(s.scores_b.begin(), s.scores_b.end()));
    double hi = std::max(*std::max_element(s.scores_a.begin(), s.scores_a.end()),
                         *std::max_element(s.scores_b.begin(), s.scores_b.end()));
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    DistributionEntry d;
    d.description = s.candidate.text;
    d.direction = discover::to_string(s.candidate.direction);
    d.range = {lo, hi};
    d.group_a = numstat::summarize(s.scores_a, o.bins, d.range, o.kde_points);
    d.group_b = numstat::summarize(s.scores_b, o.bins, d.range, o.kde_points);
    return d;
}

std::optional<ClusterReport> cluster(const std::vector<PairReport>& pairs, const AnalyzeOptions& o,
                                     std::vector<std::string>& notes) {
    std::vector<std::vector<std::string>> docs;
    std::vector<std::string> ids, texts, labels;
    std::vector<Selector> sel;
    for (const auto& p : pairs) {
        const auto s = slug(p.pair);
        for (std::size_t i = 0; i < p.descriptions.size(); ++i) {
            const auto& d = p.descriptions[i];
            if (!d.scored) continue;
            docs.push_back(textmine::tokenize(d.candidate.text));
            ids.push_back(s + "#" + std::to_string(i));
            texts.push_back(d.candidate.text);
            sel.push_back(described_selector(d));
            labels.push_back(sel.back().label());
        }
    }
    if (docs.size() < std::max<std::size_t>(3, o.k)) {
        notes.push_back("clustering skipped: " + std::to_string(docs.size()) + " description(s), need at least " +
                        std::to_string(std::max<std::size_t>(3, o.k)));
        return std::nullopt;
    }
    const auto tf = textmine::tfidf(docs, ids);
    if (tf.vocab.size() < 2) {
        notes.push_back("clustering skipped: vocabulary has fewer than 2 terms");
        return std::nullopt;
    }
    const auto pca = textmine::pca_2d(tf.rows);
    textmine::Matrix plane;
    for (const auto& c : pca.coords) plane.push_back({c[0], c[1]});
    const auto km = textmine::kmeans_sweep(plane, o.k, o.seed, std::max<std::size_t>(1, o.kmeans_restarts));

    ClusterReport r;
    r.k = o.k;
    r.seed = km.seed;
    r.inertia = km.inertia;
    r.explained_variance = pca.explained_variance;
    r.warnings = pca.warnings;
    r.purity = textmine::cluster_purity(km.assignments, labels);
    for (std::size_t i = 0; i < ids.size(); ++i)
        r.points.push_back({ids[i], texts[i], pca.coords[i][0], pca.coords[i][1], km.assignments[i], sel[i].city,
                            sel[i].period});
    return r;
}

std::vector<WordFrequencyReport> word_frequencies(const std::vector<PairReport>& pairs, const AnalyzeOptions& o) {
    std::map<std::string, std::vector<std::string>> by_group;
    for (const auto& p : pairs)
        for (const auto& d : p.descriptions)
            if (d.scored) by_group[described_selector(d).label()].push_back(d.candidate.text);
    std::vector<WordFrequencyReport> out;
    for (const auto& [group, docs] : by_group) {
        std::vector<std::string> others;
        for (const auto& [g, d] : by_group)
            if (g != group) others.insert(others.end(), d.begin(), d.end());
        WordFrequencyReport w{group, {}, {}};
        if (others.empty()) {
            w.terms = textmine::word_frequencies(docs, o.top_terms);
        } else {
            auto c = textmine::contrast_word_frequencies(docs, others, o.top_terms, o.contrast_fraction);
            w.terms = std::move(c.primary);
            w.dropped = std::move(c.dropped);
        }
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace

RunReport analyze(const std::vector<assess::ScoredDescription>& scored, const AnalyzeOptions& options) {
    RunReport r;
    r.alpha = options.alpha;
    std::vector<std::string> order;
    std::map<std::string, std::vector<assess::ScoredDescription>> groups;
    for (const auto& s : scored) {
        if (!groups.count(s.candidate.pair)) order.push_back(s.candidate.pair);
        groups[s.candidate.pair].push_back(s);
    }
    for (const auto& label : order) {
        PairReport p;
        p.pair = label;
        p.descriptions = std::move(groups[label]);
        p.ranked = assess::rank_and_filter(p.descriptions, options.alpha);
        p.pass_rate = assess::pass_rate(p.descriptions);
        for (auto dir : {discover::Direction::DescribesA, discover::Direction::DescribesB}) {
            const auto it = std::find_if(p.ranked.begin(), p.ranked.end(),
                                         [&](const auto& s) { return s.candidate.direction == dir; });
            if (it == p.ranked.end()) continue;
            if (auto d = distribution_for(*it, options)) p.distributions.push_back(std::move(*d));
        }
        r.pairs.push_back(std::move(p));
    }
    r.clusters = cluster(r.pairs, options, r.notes);
    r.word_frequencies = word_frequencies(r.pairs, options);
    return r;
}

namespace {

json summary_json(const numstat::DistributionSummary& s) {
    return {{"bandwidth", s.bandwidth},
            {"histogram", {{"edges", s.histogram.edges}, {"counts", s.histogram.counts}}},
            {"box", {{"min", s.box.min}, {"q1", s.box.q1}, {"median", s.box.median}, {"q3", s.box.q3}, {"max", s.box.max},
                     {"whisker_lo", s.box.whisker_lo}, {"whisker_hi", s.box.whisker_hi}, {"outliers", s.box.outliers}}},
            {"kde", {{"grid", s.kde_grid}, {"density", s.kde_density}}}};
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + io::format_double(v[i]);
    return out;
}

}  // namespace

json to_json(const RunReport& r) {
    json pairs = json::array();
    for (const auto& p : r.pairs) {
        json descriptions = json::array(), ranked = json::array(), dists = json::array();
        for (const auto& d : p.descriptions) descriptions.push_back(assess::to_json(d));
        for (const auto& d : p.ranked)
            ranked.push_back({{"text", d.candidate.text}, {"direction", discover::to_string(d.candidate.direction)},
                              {"auroc", d.auroc}, {"d_y", d.d_y}, {"p", d.p_value}});
        for (const auto& d : p.distributions)
            dists.push_back({{"description", d.description}, {"direction", d.direction},
                             {"range", {d.range.first, d.range.second}}, {"group_a", summary_json(d.group_a)},
                             {"group_b", summary_json(d.group_b)}});
        pairs.push_back({{"pair", p.pair}, {"slug", slug(p.pair)},
                         {"pass_rate", {{"significant", p.pass_rate.significant}, {"scored", p.pass_rate.scored},
                                        {"rate", p.pass_rate.rate}}},
                         {"descriptions", descriptions}, {"ranked", ranked}, {"distributions", dists}});
    }
    json out = {{"run_id", r.run_id}, {"config_digest", r.config_digest}, {"alpha", r.alpha}, {"pairs", pairs},
                {"notes", r.notes}};
    if (r.clusters) {
        const auto& c = *r.clusters;
        json points = json::array();
        for (const auto& p : c.points)
            points.push_back({{"doc_id", p.doc_id}, {"text", p.text}, {"x", p.x}, {"y", p.y}, {"cluster", p.cluster},
                              {"city", p.city}, {"period", p.period}});
        out["clusters"] = {{"k", c.k}, {"seed", c.seed}, {"purity", c.purity}, {"inertia", c.inertia},
                           {"explained_variance", c.explained_variance}, {"warnings", c.warnings}, {"points", points}};
    } else {
        out["clusters"] = nullptr;
    }
    json wf = json::object();
    for (const auto& w : r.word_frequencies) {
        json terms = json::array();
        for (const auto& t : w.terms) terms.push_back({{"term", t.term}, {"count", t.count}});
        wf[w.group] = {{"terms", terms}, {"dropped", w.dropped}};
    }
    out["word_frequencies"] = wf;
    out["study"] = r.study ? study::to_json(*r.study) : json(nullptr);
    return out;
}

std::string format_pass_rate_csv(const RunReport& r) {
    std::string out = io::csv_row({"pair", "significant", "scored", "pass_rate", "alpha"});
    for (const auto& p : r.pairs)
        out += io::csv_row({p.pair, std::to_string(p.pass_rate.significant), std::to_string(p.pass_rate.scored),
                            io::format_double(p.pass_rate.rate), io::format_double(r.alpha)});
    return out;
}

std::string format_histogram_csv(const PairReport& p) {
    std::string out = io::csv_row({"description", "direction", "group", "bin", "lo", "hi", "count"});
    for (const auto& d : p.distributions)
        for (const auto& [group, s] : {std::pair{"A", &d.group_a}, std::pair{"B", &d.group_b}})
            for (std::size_t i = 0; i < s->histogram.counts.size(); ++i)
                out += io::csv_row({d.description, d.direction, group, std::to_string(i),
                                    io::format_double(s->histogram.edges[i]), io::format_double(s->histogram.edges[i + 1]),
                                    std::to_string(s->histogram.counts[i])});
    return out;
}

std::string format_kde_csv(const PairReport& p) {
    std::string out = io::csv_row({"description", "direction", "group", "x", "density", "bandwidth"});
    for (const auto& d : p.distributions)
        for (const auto& [group, s] : {std::pair{"A", &d.group_a}, std::pair{"B", &d.group_b}})
            for (std::size_t i = 0; i < s->kde_density.size(); ++i)
                out += io::csv_row({d.description, d.direction, group, io::format_double(s->kde_grid[i]),
                                    io::format_double(s->kde_density[i]), io::format_double(s->bandwidth)});
    return out;
}

std::string format_box_csv(const PairReport& p) {
    std::string out = io::csv_row({"description", "direction", "group", "min", "q1", "median", "q3", "max",
                                   "whisker_lo", "whisker_hi", "outliers"});
    for (const auto& d : p.distributions)
        for (const auto& [group, s] : {std::pair{"A", &d.group_a}, std::pair{"B", &d.group_b}}) {
            const auto& b = s->box;
            out += io::csv_row({d.description, d.direction, group, io::format_double(b.min), io::format_double(b.q1),
                                io::format_double(b.median), io::format_double(b.q3), io::format_double(b.max),
                                io::format_double(b.whisker_lo), io::format_double(b.whisker_hi),
                                join_doubles(b.outliers)});
        }
    return out;
}

std::string format_clusters_csv(const ClusterReport& c) {
    std::string out = io::csv_row({"doc_id", "x", "y", "cluster", "city", "period"});
    for (const auto& p : c.points)
        out += io::csv_row({p.doc_id, io::format_double(p.x), io::format_double(p.y), std::to_string(p.cluster), p.city,
                            p.period});
    return out;
}

std::vector<std::string> emit(const RunReport& report, const std::filesystem::path& out_dir, EmitFormats formats) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw Error(ErrorKind::Io, "cannot create output directory " + out_dir.string());

    std::map<std::string, std::string> files;
    if (formats.json) {
        files["report.json"] = to_json(report).dump(2) + "\n";
        for (const auto& w : report.word_frequencies) {
            json terms = json::array();
            for (const auto& t : w.terms) terms.push_back({{"term", t.term}, {"count", t.count}, {"corpus", w.group}});
            files["wordfreq_" + slug(w.group) + ".json"] =
                json{{"group", w.group}, {"terms", terms}, {"dropped", w.dropped}}.dump(2) + "\n";
        }
    }
    if (formats.csv && !report.pairs.empty()) {
        std::vector<assess::ScoredDescription> all;
        for (const auto& p : report.pairs) all.insert(all.end(), p.descriptions.begin(), p.descriptions.end());
        files["descriptions.csv"] = assess::format_scored_csv(all);
        files["pass_rate.csv"] = format_pass_rate_csv(report);
        for (const auto& p : report.pairs) {
            const auto s = slug(p.pair);
            files["hist_" + s + ".csv"] = format_histogram_csv(p);
            files["kde_" + s + ".csv"] = format_kde_csv(p);
            files["box_" + s + ".csv"] = format_box_csv(p);
        }
        if (report.clusters) files["clusters.csv"] = format_clusters_csv(*report.clusters);
        if (report.study) files["study_results.csv"] = study::format_results_csv(*report.study);
    }
    std::vector<std::string> names;
    for (const auto& [name, body] : files) {
        io::write_file_atomic(out_dir / name, body);
        names.push_back(name);
    }
    return names;
}

}  // namespace urbansense::report
