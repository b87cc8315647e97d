#include <doctest.h>

#include <cmath>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "test_util.hpp"
#include "urbansense/digest.hpp"
#include "urbansense/discoverer.hpp"
#include "urbansense/mock.hpp"
#include "urbansense/numstat.hpp"

using namespace urbansense;
using namespace urbansense::discover;
using namespace urbansense::providers;
using nlohmann::json;

namespace {

ProviderConfig cfg(ProviderKind kind) {
    ProviderConfig c;
    c.kind = kind;
    c.endpoint = "mock://";
    c.model = "mock-1";
    return c;
}

struct World {
    testutil::TempDir dir;
    std::shared_ptr<MockBackend> mock;
    ProviderClient captioner;
    ProviderClient judge;
    ProviderClient embedder;

    explicit World(MockOptions opt = {})
        : mock(std::make_shared<MockBackend>(std::move(opt))),
          captioner(cfg(ProviderKind::Captioner), mock),
          judge(cfg(ProviderKind::Judge), mock),
          embedder(cfg(ProviderKind::Embedder), mock) {}

    ImageRecord image(const std::string& id, const std::string& city, const std::string& content) {
        const auto p = dir / (id + ".img");
        testutil::write_text(p, "bytes of " + id);
        mock->register_image_content(sha256_hex("bytes of " + id), content);
        return {id, p.string(), city, "old", content, std::nullopt, std::nullopt};
    }
};

SubsetPair fixed_pair(std::vector<ImageRecord> a, std::vector<ImageRecord> b, std::uint32_t round = 0) {
    SubsetPair p;
    p.round_index = round;
    p.subset_a = {GroupTag::A, {}, 0, round, a.size()};
    p.subset_b = {GroupTag::B, {}, 0, round, b.size()};
    for (const auto& r : a) p.subset_a.member_ids.push_back(r.id);
    for (const auto& r : b) p.subset_b.member_ids.push_back(r.id);
    p.images_a = std::move(a);
    p.images_b = std::move(b);
    return p;
}

void write_png(const std::filesystem::path& p, int w, int h, cv::Scalar color) {
    cv::Mat m(h, w, CV_8UC3, color);
    REQUIRE(cv::imwrite(p.string(), m));
}

}  // namespace

TEST_CASE("caption proposer: counting contract") {
    World w;
    auto a = w.image("a1", "X", "red roofs");
    auto a2 = w.image("a2", "X", "red lanterns");
    auto b = w.image("b1", "Y", "glass towers");
    auto b2 = w.image("b2", "Y", "wide avenues");
    ProposeOptions opt;
    opt.k = 5;
    auto one = propose_via_captions({fixed_pair({a, a2}, {b, b2})}, w.captioner, w.judge, opt);
    CHECK(one.candidates.size() == 10);
    std::size_t na = 0;
    for (const auto& c : one.candidates) {
        CHECK(c.proposer == Proposer::Caption);
        CHECK(c.template_digest == template_digest(opt.prompts.propose_captions));
        na += c.direction == Direction::DescribesA;
    }
    CHECK(na == 5);

    std::vector<SubsetPair> rounds;
    for (std::uint32_t r = 0; r < 3; ++r) rounds.push_back(fixed_pair({a, a2}, {b, b2}, r));
    CHECK(propose_via_captions(rounds, w.captioner, w.judge, opt).candidates.size() == 30);
}

TEST_CASE("caption proposer: planted tokens surface with the right direction") {
    World w;
    std::vector<ImageRecord> a, b;
    for (int i = 0; i < 6; ++i) {
        a.push_back(w.image("a" + std::to_string(i), "X", "an old pagoda near street " + std::to_string(i)));
        b.push_back(w.image("b" + std::to_string(i), "Y", "a tall skyscraper near street " + std::to_string(i)));
    }
    const auto out = propose_via_captions({fixed_pair(a, b)}, w.captioner, w.judge, {}).candidates;
    bool pagoda_a = false, skyscraper_b = false, pagoda_b = false;
    for (const auto& c : out) {
        const bool has_p = c.text.find("pagoda") != std::string::npos;
        if (has_p && c.direction == Direction::DescribesA) pagoda_a = true;
        if (has_p && c.direction == Direction::DescribesB) pagoda_b = true;
        if (c.text.find("skyscraper") != std::string::npos && c.direction == Direction::DescribesB) skyscraper_b = true;
    }
    CHECK(pagoda_a);
    CHECK(skyscraper_b);
    CHECK_FALSE(pagoda_b);
}

TEST_CASE("proposal output is reproducible") {
    auto run = [] {
        World w;
        std::vector<ImageRecord> a, b;
        for (int i = 0; i < 4; ++i) {
            a.push_back(w.image("a" + std::to_string(i), "X", "pagoda " + std::to_string(i)));
            b.push_back(w.image("b" + std::to_string(i), "Y", "tower " + std::to_string(i)));
        }
        GroupPartition g{a, b, {"X", "old"}, {"Y", "old"}};
        const auto rounds = make_rounds(g, 2, 3, 99);
        return format_candidates_jsonl(propose_via_captions(rounds, w.captioner, w.judge, {}).candidates);
    };
    CHECK(run() == run());
}

TEST_CASE("make_rounds: resampling policy") {
    std::vector<ImageRecord> a, b;
    for (int i = 0; i < 30; ++i) {
        a.push_back({"a" + std::to_string(i), "p", "X", "old", std::nullopt, std::nullopt, std::nullopt});
        b.push_back({"b" + std::to_string(i), "p", "Y", "old", std::nullopt, std::nullopt, std::nullopt});
    }
    GroupPartition g{a, b, {"X", "old"}, {"Y", "old"}};
    const auto fixed = make_rounds(g, 5, 3, 1, false);
    CHECK(fixed[0].subset_a.member_ids == fixed[2].subset_a.member_ids);
    CHECK(fixed[2].round_index == 2);
    const auto fresh = make_rounds(g, 5, 3, 1, true);
    CHECK(fresh[0].subset_a.member_ids != fresh[1].subset_a.member_ids);
    CHECK(fresh[0].subset_a.id() != fresh[1].subset_a.id());
    CHECK_THROWS_AS(make_rounds(g, 5, 0, 1), Error);
}

TEST_CASE("parse_proposal_reply") {
    auto [a, b] = parse_proposal_reply("Sure!\n```json\n{\"A\": [\"x  y\", \"\", \"z\"], \"B\": [\"w\"]}\n```", 5);
    CHECK(a == std::vector<std::string>{"x y", "z"});
    CHECK(b == std::vector<std::string>{"w"});
    auto [a2, b2] = parse_proposal_reply(R"({"A": ["1","2","3"], "B": []})", 2);
    CHECK(a2.size() == 2);
    CHECK_THROWS_AS(parse_proposal_reply("no json here", 5), Error);
    CHECK_THROWS_AS(parse_proposal_reply("{not json}", 5), Error);
}

TEST_CASE("grid layout arithmetic") {
    const auto g20 = grid_layout(20);
    CHECK(g20.columns == 5);
    CHECK(g20.rows == 4);
    CHECK(g20.width == 1280);
    CHECK(g20.height == 1024);
    const auto g1 = grid_layout(1);
    CHECK((g1.columns == 1 && g1.rows == 1 && g1.width == 256 && g1.height == 256));
    const auto g7 = grid_layout(7);
    CHECK((g7.columns == 5 && g7.rows == 2));
    CHECK_THROWS_AS(grid_layout(0), Error);
    for (std::size_t n = 1; n <= 40; ++n) {
        const auto g = grid_layout(n);
        CHECK(static_cast<std::size_t>(g.columns) == std::min<std::size_t>(5, n));
        CHECK(static_cast<std::size_t>(g.columns * g.rows) >= n);
        CHECK(static_cast<std::size_t>(g.columns * (g.rows - 1)) < n);
    }
}

TEST_CASE("compose_grid: letterboxing, blank tiles, undecodable images") {
    testutil::TempDir dir;
    std::vector<ImageRecord> imgs;
    for (int i = 0; i < 7; ++i) {
        const auto p = dir / ("t" + std::to_string(i) + ".png");
        write_png(p, i == 0 ? 100 : 64, i == 0 ? 50 : 64, cv::Scalar(0, 0, 200));
        imgs.push_back({"t" + std::to_string(i), p.string(), "X", "old", std::nullopt, std::nullopt, std::nullopt});
    }
    auto g = compose_grid(imgs);
    CHECK(g.tiles == 7);
    const cv::Mat canvas = cv::imdecode(std::vector<unsigned char>(g.png.begin(), g.png.end()), cv::IMREAD_COLOR);
    REQUIRE_FALSE(canvas.empty());
    CHECK(canvas.cols == 1280);
    CHECK(canvas.rows == 512);
    // Tile 0 is 2:1, letterboxed to 256x128 centered vertically.
    CHECK(canvas.at<cv::Vec3b>(128, 128) == cv::Vec3b(0, 0, 200));
    CHECK(canvas.at<cv::Vec3b>(10, 128) == cv::Vec3b(255, 255, 255));
    // Last row holds tiles 5 and 6; the remaining three are blank.
    CHECK(canvas.at<cv::Vec3b>(384, 256 + 128) == cv::Vec3b(0, 0, 200));
    CHECK(canvas.at<cv::Vec3b>(384, 512 + 128) == cv::Vec3b(255, 255, 255));
    CHECK(canvas.at<cv::Vec3b>(384, 1280 - 10) == cv::Vec3b(255, 255, 255));

    testutil::write_text(dir / "broken.png", "not an image");
    imgs.push_back({"broken", (dir / "broken.png").string(), "X", "old", std::nullopt, std::nullopt, std::nullopt});
    g = compose_grid(imgs);
    CHECK(g.tiles == 7);
    CHECK(g.skipped == std::vector<std::string>{"broken"});
    CHECK_THROWS_AS(compose_grid({imgs.back()}), Error);
}

TEST_CASE("grid proposer") {
    World w;
    testutil::TempDir dir;
    std::vector<ImageRecord> a, b;
    for (int i = 0; i < 3; ++i) {
        const auto pa = dir / ("a" + std::to_string(i) + ".png");
        const auto pb = dir / ("b" + std::to_string(i) + ".png");
        write_png(pa, 40, 30, cv::Scalar(i * 10, 0, 0));
        write_png(pb, 30, 40, cv::Scalar(0, i * 10, 0));
        a.push_back({"a" + std::to_string(i), pa.string(), "X", "old", std::nullopt, std::nullopt, std::nullopt});
        b.push_back({"b" + std::to_string(i), pb.string(), "Y", "old", std::nullopt, std::nullopt, std::nullopt});
    }
    ProposeOptions opt;
    opt.k = 4;
    const auto out = propose_via_grid({fixed_pair(a, b)}, w.captioner, opt);
    CHECK(out.candidates.size() == 8);
    for (const auto& c : out.candidates) CHECK(c.proposer == Proposer::Grid);
}

namespace {

// Embeddings are the whitespace-separated numbers in the text (or in the image bytes).
struct VectorTransport : Transport {
    MockBackend chat;
    static std::vector<double> parse(const std::string& s) {
        std::istringstream in(s);
        std::vector<double> v;
        for (double x; in >> x;) v.push_back(x);
        return v;
    }
    HttpResponse post(const HttpRequest& r) override {
        if (r.url.find("/v1/embeddings") == std::string::npos) return chat.post(r);
        const auto body = json::parse(r.body);
        std::string text;
        if (body["input"].is_string()) {
            text = body["input"];
        } else {
            const std::string url = body["input"][0]["image"];
            text = base64_decode(url.substr(url.find(',') + 1));
        }
        return {200, json{{"data", {{{"embedding", parse(text)}}}}}.dump()};
    }
};

}  // namespace

TEST_CASE("embedding proposer: symmetric subsets and zero difference") {
    testutil::TempDir dir;
    auto t = std::make_shared<VectorTransport>();
    ProviderClient emb(cfg(ProviderKind::Embedder), t);
    ProviderClient text(cfg(ProviderKind::Judge), t);
    auto img = [&](const std::string& id, const std::string& vec) {
        testutil::write_text(dir / id, vec);
        return ImageRecord{id, (dir / id).string(), "X", "old", std::nullopt, std::nullopt, std::nullopt};
    };
    const auto a = std::vector{img("a1", "1 2 0"), img("a2", "1 2 0.5")};
    const auto b = std::vector{img("b1", "-1 -2 0"), img("b2", "-1 -2 -0.5")};
    EmbeddingProposeOptions eo;
    eo.phrase_bank = {"0 0 1", "1 2 0", "-1 -2 0", "2 1 0"};
    eo.neighbors = 2;
    ProposeOptions opt;
    opt.k = 2;
    const auto out = propose_via_embeddings({fixed_pair(a, b)}, emb, text, opt, eo);
    // diff = 2 * mean(A) = (2, 4, 0.5): nearest are "1 2 0" then "2 1 0"; -diff nearest is "-1 -2 0".
    REQUIRE(out.candidates.size() == 4);
    CHECK(out.candidates[0].text == "1 2 0");
    CHECK(out.candidates[0].direction == Direction::DescribesA);
    CHECK(out.candidates[1].text == "2 1 0");
    CHECK(out.candidates[2].text == "-1 -2 0");
    CHECK(out.candidates[2].direction == Direction::DescribesB);

    const auto same = propose_via_embeddings({fixed_pair(a, a)}, emb, text, opt, eo);
    CHECK(same.candidates.empty());
    REQUIRE(same.notes.size() == 1);
    CHECK(same.notes[0].find("no separation") != std::string::npos);

    EmbeddingProposeOptions empty;
    CHECK_THROWS_AS(propose_via_embeddings({fixed_pair(a, b)}, emb, text, opt, empty), Error);
}

TEST_CASE("embedding proposer: planted directions pick the planted phrase") {
    MockOptions mo;
    mo.planted = {{"pagoda", 3}, {"skyscraper", 7}};
    World w(mo);
    std::vector<ImageRecord> a, b;
    for (int i = 0; i < 5; ++i) {
        a.push_back(w.image("a" + std::to_string(i), "X", "pagoda courtyard " + std::to_string(i)));
        b.push_back(w.image("b" + std::to_string(i), "Y", "skyscraper plaza " + std::to_string(i)));
    }
    EmbeddingProposeOptions eo;
    eo.phrase_bank = {"wide streets", "traditional pagoda roofs", "glass skyscraper facades", "green trees",
                      "parked cars", "street vendors"};
    eo.neighbors = 1;
    ProposeOptions opt;
    opt.k = 1;
    const auto out = propose_via_embeddings({fixed_pair(a, b)}, w.embedder, w.judge, opt, eo);
    REQUIRE(out.candidates.size() == 2);

    // Brute-force nearest neighbour of the mean difference.
    std::vector<double> diff(64, 0.0);
    for (const auto& r : a) {
        const auto v = w.mock->embed_raw(*r.caption);
        for (int d = 0; d < 64; ++d) diff[d] += v[d] / 5.0;
    }
    for (const auto& r : b) {
        const auto v = w.mock->embed_raw(*r.caption);
        for (int d = 0; d < 64; ++d) diff[d] -= v[d] / 5.0;
    }
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t i = 0; i < eo.phrase_bank.size(); ++i) {
        const double c = numstat::cosine_similarity(diff, w.mock->embed_raw(eo.phrase_bank[i]));
        if (c > best_cos) best_cos = c, best = i;
    }
    CHECK(eo.phrase_bank[best] == "traditional pagoda roofs");
    CHECK(out.candidates[0].text == "traditional pagoda roofs");
    CHECK(out.candidates[1].text == "glass skyscraper facades");
}

TEST_CASE("embedding proposer falls back to manifest captions") {
    World w;
    auto a = w.image("a", "X", "pagoda");
    auto b = w.image("b", "Y", "tower");
    const auto out = propose_via_embeddings({fixed_pair({a}, {b})}, w.embedder, w.judge, {}, {});
    CHECK_FALSE(out.candidates.empty());
}

namespace {
CandidateDescription cand(std::string text, std::uint32_t round = 0, Direction d = Direction::DescribesA) {
    return {std::move(text), Proposer::Caption, round, "sa", "sb", d, "X:old vs Y:old", ""};
}
}  // namespace

TEST_CASE("dedup") {
    CHECK(dedup({}).empty());
    const auto one = dedup({cand("Wide roads"), cand("wide  roads")});
    REQUIRE(one.size() == 1);
    CHECK(one[0].text == "Wide roads");

    // Earliest round wins even when it appears later in the input; output keeps input order.
    const auto r = dedup({cand("wide roads", 2), cand("Narrow lanes", 0), cand("Wide Roads", 1)});
    REQUIRE(r.size() == 2);
    CHECK(r[0].text == "Narrow lanes");
    CHECK(r[1].text == "Wide Roads");

    // Same text in the other direction is a different claim.
    CHECK(dedup({cand("pagodas"), cand("pagodas", 0, Direction::DescribesB)}).size() == 2);

    auto at_cosine = [](double c) {
        return [c](const std::string& t) {
            if (t == "first") return EmbeddingVector({1.0, 0.0});
            return EmbeddingVector({c, std::sqrt(1.0 - c * c)});
        };
    };
    CHECK(dedup({cand("first"), cand("second")}, at_cosine(0.97)).size() == 1);
    CHECK(dedup({cand("first"), cand("second")}, at_cosine(0.80)).size() == 2);
    // Tie on round: lexicographically smaller text survives.
    const auto lex = dedup({cand("second"), cand("first")}, at_cosine(0.97));
    REQUIRE(lex.size() == 1);
    CHECK(lex[0].text == "first");
}

TEST_CASE("candidate JSONL round trip") {
    std::vector<CandidateDescription> cs{cand("a \"quoted\" text", 1), cand("ünïcode", 2, Direction::DescribesB)};
    cs[1].proposer = Proposer::Embedding;
    cs[1].template_digest = "abc";
    CHECK(parse_candidates_jsonl(format_candidates_jsonl(cs)) == cs);
    const auto j = to_json(cs[0]);
    CHECK(j["direction"] == "describes-A");
    CHECK(j["source_subsets"] == json::array({"sa", "sb"}));
    CHECK_THROWS_AS(parse_candidates_jsonl("{\"text\": \"\"}\n"), Error);
}
