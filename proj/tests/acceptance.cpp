// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <Eigen/Dense>

#include <httplib.h>
#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "test_util.hpp"
#include "urbansense/assessor.hpp"
#include "urbansense/config.hpp"
#include "urbansense/evalstudy.hpp"
#include "urbansense/log.hpp"
#include "urbansense/numstat.hpp"
#include "urbansense/pipeline.hpp"
#include "urbansense/rng.hpp"
#include "urbansense/synth.hpp"
#include "urbansense/textmine.hpp"

using namespace urbansense;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class Criterion {
public:
    explicit Criterion(std::string id) : id_(std::move(id)) {}

    void expect(bool ok, const std::string& what) {
        ++checks_;
        if (!ok && failures_.size() < 5) failures_.push_back(what);
        failed_ |= !ok;
    }
    void note(const std::string& s) { notes_.push_back(s); }

    bool report(std::ostream& out) const {
        out << id_ << (failed_ ? " FAIL" : " PASS") << "  (" << checks_ << " checks)";
        for (const auto& n : notes_) out << "; " << n;
        out << "\n";
        for (const auto& f : failures_) out << "    " << f << "\n";
        return !failed_;
    }

private:
    std::string id_;
    std::size_t checks_ = 0;
    bool failed_ = false;
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

std::map<std::string, std::string> read_tree(const fs::path& dir, const std::string& skip = "cache") {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        const auto rel = fs::relative(e.path(), dir).string();
        if (rel.rfind(skip, 0) == 0 || !e.is_regular_file()) continue;
        out[rel] = testutil::read_text(e.path());
    }
    return out;
}

// Statistical primitives against brute force and quadrature.
void check_c1(Criterion& c) {
    Pcg32 rng(1, 1);
    double worst_auroc = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t np = 1 + rng.bounded(30), nn = 1 + rng.bounded(30);
        const bool ties = i % 2 == 0;
        auto draw = [&] { return ties ? static_cast<double>(rng.bounded(6)) : rng.normal(); };
        std::vector<double> pos(np), neg(nn);
        for (auto& x : pos) x = draw();
        for (auto& x : neg) x = draw();
        const auto counts = numstat::auroc_counts(pos, neg);
        c.expect(counts.doubled_u == oracle::brute_force_doubled_u(pos, neg), "auroc counts differ at instance " + std::to_string(i));
        c.expect(counts.doubled_pairs == static_cast<long long>(2 * np * nn), "pair count differs at instance " + std::to_string(i));
        worst_auroc = std::max(worst_auroc, std::fabs(numstat::auroc(pos, neg) - oracle::brute_force_auroc(pos, neg)));
    }
    c.expect(worst_auroc <= 0x1p-53, "auroc quotient off by " + fmt(worst_auroc));

    double worst_cauchy = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double t = -50.0 + 100.0 * rng.uniform();
        worst_cauchy = std::max(worst_cauchy, std::fabs(numstat::student_t_cdf(t, 1.0) - (0.5 + std::atan(t) / std::numbers::pi)));
    }
    c.expect(worst_cauchy <= 1e-10, "Cauchy closed form off by " + fmt(worst_cauchy));

    double worst_beta = 0.0, worst_t = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double a = std::exp(std::log(0.3) + rng.uniform() * std::log(40.0 / 0.3));
        const double b = std::exp(std::log(0.3) + rng.uniform() * std::log(40.0 / 0.3));
        const double x = rng.uniform();
        worst_beta = std::max(worst_beta, std::fabs(numstat::regularized_incomplete_beta(a, b, x) - oracle::incomplete_beta(a, b, x)));
        const double t = -8.0 + 16.0 * rng.uniform();
        const double df = 0.5 + 60.0 * rng.uniform();
        worst_t = std::max(worst_t, std::fabs(numstat::student_t_cdf(t, df) - oracle::student_t_cdf(t, df)));
    }
    c.expect(worst_beta <= 1e-8, "incomplete beta off by " + fmt(worst_beta));
    c.expect(worst_t <= 1e-8, "t cdf off by " + fmt(worst_t));

    const std::vector<double> a{1, 2, 3, 4}, b{2, 3, 4, 5};
    const auto w = numstat::welch_t_test(a, b);
    c.expect(std::fabs(w.t_stat + std::sqrt(6.0 / 5.0)) <= 1e-12, "Welch t = " + fmt(w.t_stat));
    c.expect(std::fabs(w.df - 6.0) <= 1e-12, "Welch df = " + fmt(w.df));
    c.note("max |auroc - brute| " + fmt(worst_auroc) + ", beta " + fmt(worst_beta) + ", t cdf " + fmt(worst_t));
}

discover::CandidateDescription candidate(const std::string& text, discover::Direction d) {
    discover::CandidateDescription c;
    c.text = text;
    c.direction = d;
    c.pair = "A:old vs A:new";
    return c;
}

EmbeddingVector random_vector(Pcg32& rng, std::size_t dim, double shift) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    v[0] += shift;
    return EmbeddingVector(v);
}

// Assessor invariances and the null pass rate.
void check_c2(Criterion& c) {
    using namespace assess;
    Pcg32 rng(7, 3);
    const std::size_t dim = 16;
    std::vector<EmbeddingVector> ga, gb;
    for (int i = 0; i < 25; ++i) ga.push_back(random_vector(rng, dim, 1.5));
    for (int i = 0; i < 20; ++i) gb.push_back(random_vector(rng, dim, -1.5));
    std::vector<discover::CandidateDescription> cands;
    std::vector<std::optional<EmbeddingVector>> desc;
    for (int i = 0; i < 30; ++i) {
        cands.push_back(candidate("desc " + std::to_string(i), i % 2 ? discover::Direction::DescribesB : discover::Direction::DescribesA));
        desc.push_back(random_vector(rng, dim, i % 3 == 0 ? 2.0 : 0.0));
    }

    const auto ab = assess_features(cands, desc, ga, gb, 0.05);
    const auto ba = assess_features(cands, desc, gb, ga, 0.05);
    for (std::size_t i = 0; i < ab.size(); ++i) {
        c.expect(ab[i].d_y == -ba[i].d_y, "swap: d_y not negated for " + ab[i].candidate.text);
        c.expect(ab[i].auroc == 1.0 - ba[i].auroc, "swap: auroc not complemented for " + ab[i].candidate.text);
        c.expect(ab[i].p_value == ba[i].p_value, "swap: p differs for " + ab[i].candidate.text);
    }

    auto scaled_run = [&](double k) {
        std::vector<std::optional<EmbeddingVector>> d;
        for (const auto& x : desc) d.push_back(x->scaled(k));
        std::vector<EmbeddingVector> sa, sb;
        for (const auto& x : ga) sa.push_back(x.scaled(k));
        for (const auto& x : gb) sb.push_back(x.scaled(k));
        return rank_and_filter(assess_features(cands, d, sa, sb, 0.05));
    };
    const auto base = rank_and_filter(ab);
    const auto base_text = format_scored_jsonl(base);
    for (double k : {0.25, 2.0, 1024.0})
        c.expect(format_scored_jsonl(scaled_run(k)) == base_text, "scaling by " + fmt(k) + " changed the ranked output");

    // A non-dyadic factor rounds every stored entry; order and values hold to rounding.
    const auto odd = scaled_run(3.7);
    bool same_order = odd.size() == base.size();
    double worst = 0.0;
    for (std::size_t i = 0; same_order && i < odd.size(); ++i) {
        same_order = odd[i].candidate == base[i].candidate && odd[i].auroc == base[i].auroc;
        worst = std::max(worst, std::fabs(odd[i].d_y - base[i].d_y));
    }
    c.expect(same_order, "scaling by 3.7 changed the ranking");
    c.expect(worst <= 1e-12, "scaling by 3.7 moved d_y by " + fmt(worst));
    c.note("c=3.7 bit-identical: " + std::string(format_scored_jsonl(odd) == base_text ? "yes" : "no") +
           ", max |delta d_y| " + fmt(worst));

    Pcg32 null_rng(2024, 9);
    int hits = 0;
    for (int r = 0; r < 200; ++r) {
        std::vector<double> a(40), b(40);
        for (auto& x : a) x = null_rng.normal();
        for (auto& x : b) x = null_rng.normal();
        hits += score_statistics(candidate("null", discover::Direction::DescribesA), Scorer::Feature, a, b, 0.05).significant;
    }
    c.expect(hits <= 20, "null pass rate " + std::to_string(hits) + "/200");
    c.note("null pass rate " + fmt(hits / 200.0));
}

struct RunOutcome {
    app::RunConfig config;
    app::RunResult result;
};

// Planted synthetic corpus end to end.
void check_c3(Criterion& c, const fs::path& root, std::optional<RunOutcome>& first) {
    const auto fx = app::write_synthetic_fixture(root / "fx");
    auto config = app::load_config(fx.config);
    auto r1 = app::run_pipeline(config);
    c.expect(r1.report.pairs.size() == 4, "expected 4 pairs, got " + std::to_string(r1.report.pairs.size()));
    std::string rates;
    for (const auto& p : r1.report.pairs) {
        c.expect(p.pass_rate.rate > 0.8, p.pair + " pass rate " + fmt(p.pass_rate.rate));
        rates += (rates.empty() ? "" : ", ") + fmt(p.pass_rate.rate);
    }

    // A cold run in a separate directory with its own cache gives the same report.
    auto other = config;
    other.out_dir = root / "cold";
    other.cache_dir.reset();
    const auto r2 = app::run_pipeline(other);
    c.expect(r2.network_calls > 0, "cold run made no provider calls");
    c.expect(read_tree(config.out_dir / "report") == read_tree(other.out_dir / "report"), "cold rerun report differs");
    c.note("pass rates " + rates);
    first = RunOutcome{config, std::move(r1)};
}

// Clustering of descriptions with category-specific vocabulary.
void check_c4(Criterion& c) {
    const std::map<std::string, std::string> city_word{{"Beijing", "hutong"}, {"Shenzhen", "banyan"}};
    const std::map<std::string, std::string> period_word{{"old", "weathered"}, {"new", "glass"}};
    const std::map<std::string, std::vector<std::string>> category_words{
        {"Beijing:old", {"courtyard", "lantern", "gateway", "drum"}},
        {"Beijing:new", {"ringroad", "overpass", "olympic", "campus"}},
        {"Shenzhen:old", {"village", "handshake", "clan", "ancestral"}},
        {"Shenzhen:new", {"skyline", "bayfront", "startup", "metro"}}};
    const std::vector<std::string> filler{"street", "people", "trees", "shops", "cars", "signs",
                                          "walls",  "roofs",  "paving", "light", "sky",  "bikes"};
    Pcg32 rng(4, 4);
    std::vector<std::vector<std::string>> docs;
    std::vector<std::string> labels;
    for (const auto& [label, words] : category_words) {
        const auto colon = label.find(':');
        const auto city = label.substr(0, colon), period = label.substr(colon + 1);
        for (int i = 0; i < 60; ++i) {
            std::vector<std::string> d{city_word.at(city), period_word.at(period), words[rng.bounded(4)], words[rng.bounded(4)]};
            for (int f = 0; f < 3; ++f) d.push_back(filler[rng.bounded(static_cast<std::uint32_t>(filler.size()))]);
            docs.push_back(d);
            labels.push_back(label);
        }
    }
    const auto tf = textmine::tfidf(docs);
    const auto pca = textmine::pca_2d(tf.rows);
    textmine::Matrix points;
    for (const auto& p : pca.coords) points.push_back({p[0], p[1]});
    const auto km = textmine::kmeans_sweep(points, 4, 0, 20);
    const double purity = textmine::cluster_purity(km.assignments, labels);
    c.expect(purity >= 0.95, "purity " + fmt(purity));

    const auto n = static_cast<Eigen::Index>(tf.rows.size());
    const auto d = static_cast<Eigen::Index>(tf.rows.front().size());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = tf.rows[i][j];
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + d);
    std::sort(ev.rbegin(), ev.rend());
    const double dev = std::max(std::fabs(pca.explained_variance[0] - ev[0]), std::fabs(pca.explained_variance[1] - ev[1]));
    c.expect(dev <= 1e-8, "explained variance off the eigen oracle by " + fmt(dev));
    c.note("purity " + fmt(purity) + " over " + std::to_string(docs.size()) + " descriptions, max |ev - oracle| " + fmt(dev));
}

std::map<std::string, json> perfect_answers(const study::Study& s) {
    std::map<std::string, json> out;
    for (const auto& t : s.category_tasks)
        out[study::category_item_id(t)] = {{"city", t.ground_truth.first}, {"period", t.ground_truth.second}};
    for (const auto& m : s.matching_sets)
        for (const auto& [img, truth] : m.ground_truth) out[study::matching_item_id(m, img)] = truth;
    return out;
}

// Study metrics and a scripted participant over HTTP.
void check_c5(Criterion& c, const fs::path& root, const std::optional<RunOutcome>& run) {
    using study::ConfusionMatrix2x2;
    c.expect(study::phi_coefficient(ConfusionMatrix2x2{25, 0, 0, 25}).value == 1.0, "phi(25,0,0,25) != 1");
    c.expect(study::phi_coefficient(ConfusionMatrix2x2{20, 5, 5, 20}).value == 0.6, "phi(20,5,5,20) != 0.6");
    c.expect(study::phi_coefficient(ConfusionMatrix2x2{0, 25, 25, 0}).value == -1.0, "phi(0,25,25,0) != -1");
    const Label bo{"Beijing", "old"}, bn{"Beijing", "new"}, so{"Shenzhen", "old"};
    const std::vector<study::CategoryResponse> responses{{bo, bo}, {bn, bn}, {so, so}, {bn, so}};
    c.expect(study::accuracy_total(responses) == 0.75, "accuracy_total != 0.75");

    if (!run || !run->result.study_path) {
        c.expect(false, "no study from the synthetic run");
        return;
    }
    const auto s = study::load_study(*run->result.study_path);
    study::StudyService service(s, root / "responses.jsonl");
    const int port = service.start("127.0.0.1", 0);
    httplib::Client client("127.0.0.1", port);
    const auto created = client.Post("/api/sessions", json{{"participant_group", "professional"}}.dump(), "application/json");
    c.expect(created && created->status == 201, "session creation failed");
    if (!created || created->status != 201) return;
    const std::string session = json::parse(created->body).at("session_id");
    const auto answers = perfect_answers(s);
    std::size_t answered = 0;
    for (;;) {
        const auto next = client.Get("/api/sessions/" + session + "/next");
        if (!next || next->status != 200) {
            c.expect(false, "next item request failed");
            break;
        }
        const auto body = json::parse(next->body);
        if (body.at("done").get<bool>()) break;
        const std::string item = body["item"]["item_id"];
        const auto res = client.Post("/api/sessions/" + session + "/responses",
                                     json{{"item_id", item}, {"answer", answers.at(item)}}.dump(), "application/json");
        if (!res || res->status != 204) {
            c.expect(false, "response for " + item + " rejected");
            break;
        }
        ++answered;
    }
    service.stop();
    c.expect(answered == answers.size(), "answered " + std::to_string(answered) + " of " + std::to_string(answers.size()));

    const auto results = study::aggregate(s, study::read_log(root / "responses.jsonl"));
    const auto& g = results.groups.at("professional");
    c.expect(g.accuracy && *g.accuracy == 1.0, "perfect participant accuracy != 1");
    for (const auto& set : g.sets) c.expect(set.phi.value == 1.0 && !set.phi.degenerate, set.set_id + " phi != 1");
    c.note(std::to_string(answered) + " items answered over HTTP, " + std::to_string(g.sets.size()) + " matching sets at phi 1");
}

// Reruns reuse cached provider responses and reproduce every byte.
void check_c6(Criterion& c, const std::optional<RunOutcome>& run) {
    if (!run) {
        c.expect(false, "no first run to repeat");
        return;
    }
    const auto before = read_tree(run->config.out_dir);
    const auto again = app::run_pipeline(run->config);
    c.expect(again.network_calls == 0, "second run made " + std::to_string(again.network_calls) + " provider calls");
    c.expect(read_tree(run->config.out_dir) == before, "second run changed the output tree");
    c.note("first run " + std::to_string(run->result.network_calls) + " provider calls, second run " +
           std::to_string(again.network_calls) + ", " + std::to_string(before.size()) + " files compared");
}

}  // namespace

int main() {
    log::set_level(log::Level::Error);
    testutil::TempDir dir;
    std::optional<RunOutcome> run;
    bool ok = true;

    auto guarded = [&](const std::string& id, const std::function<void(Criterion&)>& body) {
        Criterion c(id);
        try {
            body(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("exception: ") + e.what());
        }
        ok &= c.report(std::cout);
    };
    guarded("C1", check_c1);
    guarded("C2", check_c2);
    guarded("C3", [&](Criterion& c) { check_c3(c, dir.path(), run); });
    guarded("C4", check_c4);
    guarded("C5", [&](Criterion& c) { check_c5(c, dir.path(), run); });
    guarded("C6", [&](Criterion& c) { check_c6(c, run); });
    std::cout << (ok ? "ALL PASS" : "SOME FAILED") << "\n";
    return ok ? 0 : 1;
}
