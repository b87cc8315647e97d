#include <doctest.h>

#include <charconv>
#include <set>

#include "test_util.hpp"
#include "urbansense/error.hpp"
#include "urbansense/io.hpp"
#include "urbansense/report.hpp"
#include "urbansense/rng.hpp"

using namespace urbansense;
using namespace urbansense::report;
using discover::Direction;
using nlohmann::json;

namespace {

const std::vector<std::string> kPairs = {"Beijing:old vs Beijing:new", "Shenzhen:old vs Shenzhen:new",
                                         "Beijing:old vs Shenzhen:old", "Beijing:new vs Shenzhen:new"};

const std::map<std::string, std::vector<std::string>> kVocab = {
    {"Beijing:old", {"hutong", "courtyard", "siheyuan", "gateway"}},
    {"Beijing:new", {"ring", "boulevard", "olympic", "cbd"}},
    {"Shenzhen:old", {"village", "handshake", "market", "arcade"}},
    {"Shenzhen:new", {"skyline", "bay", "tech", "glass"}},
};

// n descriptions per pair; half describe each side, drawn from that side's vocabulary, with
// group A scores shifted by `shift` in the described direction.
std::vector<assess::ScoredDescription> synthetic(std::size_t n, double shift, std::uint64_t seed) {
    Pcg32 rng(seed);
    std::vector<assess::ScoredDescription> out;
    for (const auto& pair : kPairs) {
        const auto p = parse_pair(pair);
        for (std::size_t i = 0; i < n; ++i) {
            const bool describes_a = i % 2 == 0;
            const auto& words = kVocab.at(describes_a ? p.a.label() : p.b.label());
            const auto text = "streets with " + words[rng.bounded(4)] + " and " + words[rng.bounded(4)] + " " +
                              std::to_string(i);
            discover::CandidateDescription c{text, discover::Proposer::Caption, static_cast<std::uint32_t>(i % 3),
                                             "sa", "sb", describes_a ? Direction::DescribesA : Direction::DescribesB,
                                             pair, "digest"};
            std::vector<double> a, b;
            const double s = describes_a ? shift : -shift;
            for (int j = 0; j < 20; ++j) a.push_back(0.2 + s + 0.05 * rng.normal());
            for (int j = 0; j < 20; ++j) b.push_back(0.2 + 0.05 * rng.normal());
            out.push_back(assess::score_statistics(c, assess::Scorer::Feature, a, b, 0.05));
        }
    }
    return out;
}

double parse_number(const std::string& s) {
    double v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    REQUIRE(ec == std::errc{});
    REQUIRE(p == s.data() + s.size());
    return v;
}

std::map<std::string, std::string> read_dir(const std::filesystem::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        out[e.path().filename().string()] = testutil::read_text(e.path());
    return out;
}

}  // namespace

TEST_CASE("slug") {
    CHECK(slug("Beijing:old vs Beijing:new") == "beijing-old-vs-beijing-new");
    CHECK(slug("  São:*  ") == "s-o");
    CHECK(slug("::") == "unnamed");
}

TEST_CASE("empty report emits only report.json") {
    testutil::TempDir dir;
    const auto r = analyze({}, {});
    const auto files = emit(r, dir / "out");
    CHECK(files == std::vector<std::string>{"report.json"});
    const auto j = json::parse(testutil::read_text(dir / "out/report.json"));
    CHECK(j["pairs"].empty());
    CHECK(j["clusters"].is_null());
}

TEST_CASE("four pairs of sixty descriptions") {
    testutil::TempDir dir;
    const auto scored = synthetic(60, 0.1, 7);
    AnalyzeOptions opt;
    opt.seed = 3;
    auto r = analyze(scored, opt);
    r.run_id = "run-1";
    r.config_digest = "abc";
    REQUIRE(r.pairs.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& p = r.pairs[i];
        CHECK(p.pair == kPairs[i]);
        CHECK(p.descriptions.size() == 60);
        std::size_t sig = 0;
        for (const auto& d : p.descriptions) sig += d.significant;
        CHECK(p.pass_rate.significant == sig);
        CHECK(p.pass_rate.scored == 60);
        CHECK(p.pass_rate.rate == static_cast<double>(sig) / 60.0);
        CHECK(p.ranked.size() == sig);
        CHECK(p.distributions.size() == 2);
        CHECK(p.distributions[0].direction == "describes-A");
    }

    const auto files = emit(r, dir / "out");
    const std::set<std::string> names(files.begin(), files.end());
    for (const auto& n : {"report.json", "descriptions.csv", "pass_rate.csv", "clusters.csv",
                          "hist_beijing-old-vs-beijing-new.csv", "kde_shenzhen-old-vs-shenzhen-new.csv",
                          "box_beijing-new-vs-shenzhen-new.csv", "wordfreq_beijing-old.json", "wordfreq_shenzhen-new.json"})
        CHECK(names.count(n) == 1);
    CHECK(names.size() == 1 + 2 + 1 + 12 + 4);

    const auto rows = io::parse_csv(testutil::read_text(dir / "out/descriptions.csv"));
    REQUIRE(rows.size() == 241);
    CHECK(rows[0][0] == "text");
    // Every number read back equals the in-memory value.
    std::size_t k = 1;
    for (const auto& p : r.pairs)
        for (const auto& d : p.descriptions) {
            const auto& row = rows[k++];
            CHECK(row[0] == d.candidate.text);
            CHECK(parse_number(row[7]) == d.d_y);
            CHECK(parse_number(row[8]) == d.auroc);
            CHECK(parse_number(row[9]) == d.t_stat);
            CHECK(parse_number(row[10]) == d.df);
            CHECK(parse_number(row[11]) == d.p_value);
        }

    const auto pass = io::parse_csv(testutil::read_text(dir / "out/pass_rate.csv"));
    REQUIRE(pass.size() == 5);
    CHECK(pass[1][0] == kPairs[0]);
    CHECK(parse_number(pass[1][3]) == r.pairs[0].pass_rate.rate);

    const auto clusters = io::parse_csv(testutil::read_text(dir / "out/clusters.csv"));
    REQUIRE(clusters.size() == 241);
    CHECK(clusters[0] == std::vector<std::string>{"doc_id", "x", "y", "cluster", "city", "period"});
    REQUIRE(r.clusters);
    for (std::size_t i = 0; i < r.clusters->points.size(); ++i) {
        CHECK(parse_number(clusters[i + 1][1]) == r.clusters->points[i].x);
        CHECK(parse_number(clusters[i + 1][2]) == r.clusters->points[i].y);
    }
    // Category vocabularies are disjoint, so the clusters recover the categories.
    CHECK(r.clusters->purity >= 0.95);

    const auto hist = io::parse_csv(testutil::read_text(dir / "out/hist_beijing-old-vs-beijing-new.csv"));
    CHECK(hist.size() == 1 + 2 * 2 * opt.bins);
    std::size_t total = 0;
    for (std::size_t i = 1; i < hist.size(); ++i) total += std::stoul(hist[i][6]);
    CHECK(total == 2 * 40);

    const auto wf = json::parse(testutil::read_text(dir / "out/wordfreq_beijing-old.json"));
    CHECK(wf["group"] == "Beijing:old");
    std::set<std::string> terms;
    for (const auto& t : wf["terms"]) {
        terms.insert(t["term"].get<std::string>());
        CHECK(t["corpus"] == "Beijing:old");
    }
    CHECK(terms.count("hutong") == 1);
    CHECK(terms.count("skyline") == 0);
    CHECK(terms.count("streets") == 0);  // generic, shared by every group

    const auto report = json::parse(testutil::read_text(dir / "out/report.json"));
    CHECK(report["run_id"] == "run-1");
    CHECK(report["pairs"].size() == 4);
    CHECK(report["pairs"][0]["descriptions"].size() == 60);
    CHECK(report["clusters"]["points"].size() == 240);

    // Re-emitting is byte-identical, into the same and into a fresh directory.
    const auto before = read_dir(dir / "out");
    emit(r, dir / "out");
    emit(analyze(scored, opt), dir / "again");
    CHECK(read_dir(dir / "out") == before);
    auto again = read_dir(dir / "again");
    auto b2 = before;
    b2.erase("report.json");
    again.erase("report.json");
    CHECK(again == b2);
}

TEST_CASE("json keys are sorted and formats can be chosen") {
    testutil::TempDir dir;
    const auto r = analyze(synthetic(6, 0.1, 1), {});
    const auto names = emit(r, dir.path(), {true, false});
    for (const auto& n : names) CHECK(n.find(".csv") == std::string::npos);
    const auto text = testutil::read_text(dir / "report.json");
    CHECK(text.find("\"alpha\"") < text.find("\"clusters\""));
    CHECK(text.find("\"clusters\"") < text.find("\"pairs\""));
    const auto csv_only = emit(r, dir / "csv", {false, true});
    for (const auto& n : csv_only) CHECK(n.find(".json") == std::string::npos);
}

TEST_CASE("too few descriptions skip clustering with a note") {
    const auto scored = synthetic(1, 0.1, 2);
    AnalyzeOptions opt;
    opt.k = 5;
    const auto r = analyze(scored, opt);
    CHECK_FALSE(r.clusters);
    REQUIRE(r.notes.size() == 1);
    CHECK(r.notes[0].find("clustering skipped") == 0);
}

TEST_CASE("unwritable output directory") {
    testutil::TempDir dir;
    testutil::write_text(dir / "file", "x");
    try {
        emit(analyze({}, {}), dir / "file");
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
    }
}
