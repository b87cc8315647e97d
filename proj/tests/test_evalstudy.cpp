#include <doctest.h>

#include <atomic>
#include <set>
#include <thread>

#include <httplib.h>

#include "test_util.hpp"
#include "urbansense/error.hpp"
#include "urbansense/evalstudy.hpp"
#include "urbansense/rng.hpp"

using namespace urbansense;
using namespace urbansense::study;
using nlohmann::json;

namespace {

const std::vector<Label> kLabels = {{"Beijing", "new"}, {"Beijing", "old"}, {"Shenzhen", "new"}, {"Shenzhen", "old"}};

Corpus make_corpus(const testutil::TempDir& dir, std::size_t per_category) {
    std::vector<ImageRecord> records;
    for (const auto& [city, period] : kLabels)
        for (std::size_t i = 0; i < per_category; ++i) {
            const auto id = city + "_" + period + "_" + std::to_string(i);
            const auto path = dir / ("img/" + id + ".png");
            testutil::write_text(path, "bytes of " + id);
            records.push_back({id, path.string(), city, period, std::nullopt, std::nullopt, std::nullopt});
        }
    return Corpus(records);
}

assess::ScoredDescription ranked(std::string text, std::string pair, double d_y, double auroc) {
    assess::ScoredDescription s;
    s.candidate.text = std::move(text);
    s.candidate.pair = std::move(pair);
    s.candidate.direction = d_y > 0 ? discover::Direction::DescribesA : discover::Direction::DescribesB;
    s.scored = true;
    s.significant = true;
    s.d_y = d_y;
    s.auroc = auroc;
    s.p_value = 0.001;
    return s;
}

std::vector<assess::ScoredDescription> ranked_list() {
    return {
        ranked("hutong alleys", "Beijing:old vs Beijing:new", 0.4, 0.95),
        ranked("grey brick courtyards", "Beijing:old vs Beijing:new", 0.3, 0.9),
        ranked("glass towers", "Beijing:old vs Beijing:new", -0.2, 0.2),
        ranked("wide boulevards", "Beijing:old vs Beijing:new", -0.3, 0.1),
        ranked("northern courtyards", "Beijing:old vs Shenzhen:old", 0.2, 0.85),
        ranked("palm trees", "Beijing:old vs Shenzhen:old", -0.25, 0.15),
    };
}

ConfusionMatrix2x2 cm(long long a, long long b, long long c, long long d) { return {a, b, c, d}; }

// Answers every item as the study's ground truth says (or the opposite when `invert`).
std::map<std::string, json> perfect_answers(const Study& s, bool invert = false) {
    std::map<std::string, json> out;
    for (const auto& t : s.category_tasks)
        out[category_item_id(t)] = {{"city", t.ground_truth.first}, {"period", t.ground_truth.second}};
    for (const auto& m : s.matching_sets)
        for (const auto& [img, truth] : m.ground_truth) out[matching_item_id(m, img)] = invert ? 3 - truth : truth;
    return out;
}

// Recursively looks for any ground-truth field name or value leak in a payload.
bool mentions_truth(const json& j) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items())
            if (k.find("truth") != std::string::npos || k == "image_id" || k == "pair" || mentions_truth(v)) return true;
    } else if (j.is_array()) {
        for (const auto& v : j)
            if (mentions_truth(v)) return true;
    }
    return false;
}

struct Participant {
    httplib::Client client;
    std::string session;
    std::size_t answered = 0;

    Participant(int port, const std::string& group) : client("127.0.0.1", port) {
        const auto res = client.Post("/api/sessions", json{{"participant_group", group}}.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 201);
        session = json::parse(res->body).at("session_id");
    }

    // One next/answer round trip. Returns false once the service says done.
    bool step(const std::map<std::string, json>& answers, std::vector<json>* seen = nullptr) {
        const auto next = client.Get("/api/sessions/" + session + "/next");
        REQUIRE(next);
        REQUIRE(next->status == 200);
        const auto body = json::parse(next->body);
        if (seen) seen->push_back(body);
        if (body.at("done").get<bool>()) return false;
        const std::string item = body["item"]["item_id"];
        const auto res = client.Post("/api/sessions/" + session + "/responses",
                                     json{{"item_id", item}, {"answer", answers.at(item)}}.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 204);
        ++answered;
        return true;
    }
};

}  // namespace

TEST_CASE("phi_coefficient worked values and degenerate matrices") {
    CHECK(phi_coefficient(cm(25, 0, 0, 25)).value == 1.0);
    CHECK(phi_coefficient(cm(20, 5, 5, 20)).value == 0.6);
    CHECK(phi_coefficient(cm(0, 25, 25, 0)).value == -1.0);
    for (const auto& m : {cm(0, 0, 0, 0), cm(10, 5, 0, 0), cm(3, 0, 7, 0), cm(0, 0, 0, 9)}) {
        const auto p = phi_coefficient(m);
        CHECK(p.value == 0.0);
        CHECK(p.degenerate);
    }
    CHECK_FALSE(phi_coefficient(cm(1, 2, 3, 4)).degenerate);
}

TEST_CASE("phi symmetries over random matrices") {
    Pcg32 rng(11);
    for (int i = 0; i < 500; ++i) {
        const auto m = cm(rng.bounded(40), rng.bounded(40), rng.bounded(40), rng.bounded(40));
        const auto p = phi_coefficient(m);
        CHECK(phi_coefficient(cm(m.d, m.c, m.b, m.a)).value == p.value);
        CHECK(phi_coefficient(cm(m.b, m.a, m.d, m.c)).value == -p.value);
        CHECK(p.value >= -1.0);
        CHECK(p.value <= 1.0);
        if (!p.degenerate) {
            const double a = m.a, b = m.b, c = m.c, d = m.d;
            const double direct = (a * d - b * c) / std::sqrt((a + b) * (c + d) * (a + c) * (b + d));
            CHECK(p.value == doctest::Approx(direct).epsilon(1e-14));
        }
    }
}

TEST_CASE("accuracy_total counts an item only when city and period are both right") {
    const std::vector<CategoryResponse> r = {
        {{"Beijing", "old"}, {"Beijing", "old"}},
        {{"Shenzhen", "new"}, {"Shenzhen", "new"}},
        {{"Beijing", "new"}, {"Beijing", "new"}},
        {{"Shenzhen", "new"}, {"Shenzhen", "old"}},
    };
    CHECK(accuracy_total(r) == 0.75);
    auto shuffled = r;
    Pcg32 rng(3);
    for (int i = 0; i < 20; ++i) {
        rng.shuffle(shuffled);
        CHECK(accuracy_total(shuffled) == 0.75);
    }
    CHECK(accuracy_total({{{"A", "x"}, {"A", "x"}}}) == 1.0);
    CHECK_THROWS_AS(accuracy_total({}), Error);
}

TEST_CASE("confusion_2x2 tallies") {
    std::map<std::string, int> truth;
    std::vector<std::string> ids;
    for (int i = 0; i < 50; ++i) {
        ids.push_back("i" + std::to_string(i));
        truth[ids.back()] = i < 25 ? 1 : 2;
    }
    std::vector<MatchingResponse> correct, inverted;
    for (const auto& id : ids) {
        correct.push_back({id, truth[id]});
        inverted.push_back({id, 3 - truth[id]});
    }
    CHECK(confusion_2x2(correct, truth) == cm(25, 0, 0, 25));
    CHECK(confusion_2x2(inverted, truth) == cm(0, 25, 25, 0));

    // Simulated participant at 80% per-item accuracy: the 20% errors on each side are
    // placed by a seeded shuffle.
    Pcg32 rng(2024);
    std::vector<MatchingResponse> sim;
    for (int side : {1, 2}) {
        std::vector<std::string> mine;
        for (const auto& id : ids)
            if (truth[id] == side) mine.push_back(id);
        rng.shuffle(mine);
        for (std::size_t i = 0; i < mine.size(); ++i) sim.push_back({mine[i], i < 5 ? 3 - side : side});
    }
    rng.shuffle(sim);
    const auto m = confusion_2x2(sim, truth);
    CHECK(m == cm(20, 5, 5, 20));
    CHECK(m.total() == 50);
    CHECK(phi_coefficient(m).value == 0.6);

    CHECK_THROWS_AS(confusion_2x2({{"nope", 1}}, truth), Error);
    CHECK_THROWS_AS(confusion_2x2({{"i0", 3}}, truth), Error);
}

TEST_CASE("category tasks are stratified and deterministic") {
    testutil::TempDir dir;
    const auto corpus = make_corpus(dir, 6);
    const auto t8 = build_category_tasks(corpus, 8, 5);
    REQUIRE(t8.size() == 8);
    std::map<Label, int> per;
    std::set<std::string> images;
    for (const auto& t : t8) {
        ++per[t.ground_truth];
        images.insert(t.image_id);
        CHECK(t.choices == kLabels);
        CHECK(corpus.find(t.image_id)->city == t.ground_truth.first);
    }
    CHECK(images.size() == 8);
    for (const auto& l : kLabels) CHECK(per[l] == 2);
    const auto t4 = build_category_tasks(corpus, 4, 5);
    std::set<Label> labels4;
    for (const auto& t : t4) labels4.insert(t.ground_truth);
    CHECK(labels4.size() == 4);

    const auto again = build_category_tasks(corpus, 8, 5);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(again[i].task_id == t8[i].task_id);
        CHECK(again[i].image_id == t8[i].image_id);
    }
    CHECK_THROWS_AS(build_category_tasks(corpus, 100, 5), Error);
}

TEST_CASE("matching sets") {
    testutil::TempDir dir;
    const auto corpus = make_corpus(dir, 30);
    const auto sets = build_matching_sets(corpus, ranked_list(), 8, 25, 9);
    REQUIRE(sets.size() == 8);
    std::size_t items = 0;
    std::map<std::string, int> dims;
    for (const auto& m : sets) {
        CHECK(m.image_ids.size() == 50);
        CHECK(std::set<std::string>(m.image_ids.begin(), m.image_ids.end()).size() == 50);
        int ones = 0;
        for (const auto& [id, t] : m.ground_truth) ones += t == 1;
        CHECK(ones == 25);
        CHECK(m.description_1 != m.description_2);
        items += m.image_ids.size();
        ++dims[m.dimension];
        if (m.dimension == "period") {
            CHECK(m.description_1 == "hutong alleys");
            CHECK(m.description_2 == "wide boulevards");
            for (const auto& [id, t] : m.ground_truth)
                CHECK(corpus.find(id)->period == (t == 1 ? "old" : "new"));
        } else {
            CHECK(m.description_1 == "northern courtyards");
            CHECK(m.description_2 == "palm trees");
        }
    }
    CHECK(items == 400);
    CHECK(dims == std::map<std::string, int>{{"city", 4}, {"period", 4}});

    const auto again = build_matching_sets(corpus, ranked_list(), 8, 25, 9);
    for (std::size_t i = 0; i < 8; ++i) CHECK(again[i].image_ids == sets[i].image_ids);
    CHECK(build_matching_sets(corpus, ranked_list(), 8, 25, 10)[0].image_ids != sets[0].image_ids);

    const auto minimal = build_matching_sets(corpus, ranked_list(), 1, 1, 9);
    CHECK(minimal.size() == 1);
    CHECK(minimal[0].image_ids.size() == 2);

    try {
        build_matching_sets(corpus, ranked_list(), 1, 31, 9);
        FAIL("expected shortfall");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("30") != std::string::npos);
    }
    auto only_a = ranked_list();
    only_a.erase(std::remove_if(only_a.begin(), only_a.end(), [](const auto& s) { return s.d_y < 0; }), only_a.end());
    CHECK_THROWS_AS(build_matching_sets(corpus, only_a, 1, 1, 9), Error);
}

TEST_CASE("study definition round trips through JSON") {
    testutil::TempDir dir;
    const auto corpus = make_corpus(dir, 30);
    const auto s = build_study("pilot", corpus, ranked_list(), 8, 8, 25, 1);
    save_study(s, dir / "study.json");
    const auto back = load_study(dir / "study.json");
    CHECK(to_json(back) == to_json(s));
    CHECK(back.image_paths.size() == s.image_paths.size());
    testutil::write_text(dir / "bad.json", R"({"study_id": "x"})");
    CHECK_THROWS_AS(load_study(dir / "bad.json"), Error);
}

TEST_CASE("aggregate is a pure function of the log") {
    testutil::TempDir dir;
    const auto corpus = make_corpus(dir, 30);
    const auto s = build_study("pilot", corpus, ranked_list(), 4, 2, 3, 1);
    const auto answers = perfect_answers(s);
    std::vector<LogEvent> log;
    log.push_back({LogEvent::Type::Session, "p1", ParticipantGroup::Professional, "", nullptr, ""});
    log.push_back({LogEvent::Type::Session, "n1", ParticipantGroup::NonProfessional, "", nullptr, ""});
    for (const auto& [item, a] : answers) {
        log.push_back({LogEvent::Type::Response, "p1", {}, item, a, ""});
        json wrong = a.is_number() ? json(3 - a.get<int>()) : a;
        log.push_back({LogEvent::Type::Response, "n1", {}, item, wrong, ""});
    }
    const auto r = aggregate(s, log);
    const auto& pro = r.groups.at("professional");
    const auto& non = r.groups.at("non-professional");
    CHECK(pro.sessions == 1);
    CHECK(*pro.accuracy == 1.0);
    CHECK(*non.accuracy == 1.0);
    CHECK(pro.phi_by_dimension.at("period") == 1.0);
    CHECK(pro.phi_by_dimension.at("city") == 1.0);
    CHECK(non.phi_by_dimension.at("period") == -1.0);
    CHECK(pro.sets[0].confusion == cm(3, 0, 0, 3));

    auto reordered = log;
    std::stable_partition(reordered.begin(), reordered.end(),
                          [](const LogEvent& e) { return e.type == LogEvent::Type::Session; });
    std::reverse(reordered.begin() + 2, reordered.end());
    CHECK(to_json(aggregate(s, reordered)) == to_json(r));

    // Responses from unknown sessions and repeats do not count.
    auto noisy = log;
    noisy.push_back({LogEvent::Type::Response, "ghost", {}, category_item_id(s.category_tasks[0]), json{{"city", "X"}, {"period", "y"}}, ""});
    noisy.push_back(log[2]);
    CHECK(to_json(aggregate(s, noisy)) == to_json(r));

    const auto csv = format_results_csv(r);
    CHECK(csv.rfind("group,metric,set_id,dimension,value,a,b,c,d,degenerate\n", 0) == 0);
    CHECK(csv.find("professional,phi_mean,,city,1,") != std::string::npos);
}

TEST_CASE("read_log skips a torn final line") {
    testutil::TempDir dir;
    CHECK(read_log(dir / "missing.jsonl").empty());
    testutil::write_text(dir / "log.jsonl",
                         R"({"type":"session","session_id":"s","participant_group":"professional"})"
                         "\n"
                         R"({"type":"response","session_id":"s","item_id":"cat-1","ans)");
    const auto log = read_log(dir / "log.jsonl");
    REQUIRE(log.size() == 1);
    CHECK(log[0].group == ParticipantGroup::Professional);
    testutil::write_text(dir / "mid.jsonl", "garbage\n" R"({"type":"session","session_id":"s","participant_group":"professional"})" "\n");
    CHECK_THROWS_AS(read_log(dir / "mid.jsonl"), Error);
}

TEST_CASE("HTTP service: scripted perfect participant end to end") {
    testutil::TempDir dir;
    const auto corpus = make_corpus(dir, 30);
    const auto s = build_study("pilot", corpus, ranked_list(), 8, 8, 25, 42);
    StudyService service(s, dir / "responses.jsonl");
    const int port = service.start("127.0.0.1", 0);
    const auto answers = perfect_answers(s);

    Participant p(port, "professional");
    std::vector<json> payloads;
    while (p.step(answers, &payloads)) {
    }
    CHECK(p.answered == 408);
    CHECK(payloads.back() == json{{"done", true}, {"progress", {{"answered", 408}, {"total", 408}}}});

    std::size_t category = 0;
    for (const auto& body : payloads) {
        CHECK_FALSE(mentions_truth(body));
        if (body["done"].get<bool>()) continue;
        const auto& item = body["item"];
        const std::string url = item["image_url"];
        CHECK(url.find("Beijing") == std::string::npos);
        CHECK(url.find("Shenzhen") == std::string::npos);
        CHECK(item["item_id"].get<std::string>().find("_") == std::string::npos);
        if (item["kind"] == "category") {
            ++category;
            CHECK(item["choices"].size() == 4);
        } else {
            CHECK(item["descriptions"].size() == 2);
        }
    }
    CHECK(category == 8);
    CHECK(payloads[0]["item"]["kind"] == "category");

    // Image bytes come back for an advertised key.
    const std::string url = payloads[0]["item"]["image_url"];
    const auto img = p.client.Get(url);
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->body.rfind("bytes of ", 0) == 0);
    CHECK(p.client.Get("/images/0123abcd")->status == 404);

    const auto res = p.client.Get("/api/studies/pilot/results");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto body = json::parse(res->body);
    const auto& pro = body["groups"]["professional"];
    CHECK(pro["accuracy_total"] == 1.0);
    CHECK(pro["phi_by_dimension"]["city"] == 1.0);
    CHECK(pro["phi_by_dimension"]["period"] == 1.0);
    CHECK(pro["matching_sets"].size() == 8);
    for (const auto& set : pro["matching_sets"]) CHECK(set["phi"] == 1.0);
    CHECK(body["groups"]["non-professional"]["accuracy_total"].is_null());
    CHECK(p.client.Get("/api/studies/other/results")->status == 404);

    service.stop();
    // Replaying the persisted log reproduces the live results exactly.
    CHECK(to_json(aggregate(s, read_log(dir / "responses.jsonl"))) == body);
    CHECK(to_json(service.results()) == body);
}

TEST_CASE("HTTP service: response contract") {
    testutil::TempDir dir;
    const auto corpus = make_corpus(dir, 4);
    const auto s = build_study("pilot", corpus, ranked_list(), 4, 1, 2, 3);
    StudyService service(s, dir / "log" / "responses.jsonl");
    const int port = service.start("127.0.0.1", 0);
    httplib::Client c("127.0.0.1", port);
    const auto post = [&](const std::string& path, const std::string& body) {
        const auto r = c.Post(path, body, "application/json");
        REQUIRE(r);
        return r->status;
    };

    CHECK(post("/api/sessions", "{not json") == 400);
    CHECK(post("/api/sessions", "{}") == 400);
    CHECK(post("/api/sessions", R"({"participant_group": "robot"})") == 422);
    const auto created = c.Post("/api/sessions", R"({"participant_group": "non-professional"})", "application/json");
    const std::string sid = json::parse(created->body)["session_id"];
    CHECK(sid.size() == 32);

    const auto first = json::parse(c.Get("/api/sessions/" + sid + "/next")->body)["item"];
    const std::string item = first["item_id"];
    const auto right = perfect_answers(s).at(item);
    const std::string path = "/api/sessions/" + sid + "/responses";
    const auto answer = [&](const json& a) { return json{{"item_id", item}, {"answer", a}}.dump(); };

    CHECK(c.Get("/api/sessions/nope/next")->status == 404);
    CHECK(post("/api/sessions/nope/responses", answer(right)) == 404);
    CHECK(post(path, "[1,2") == 400);
    CHECK(post(path, R"({"answer": 1})") == 400);
    CHECK(post(path, json{{"item_id", "cat-999"}, {"answer", 1}}.dump()) == 422);
    CHECK(post(path, answer(json{{"city", "Atlantis"}, {"period", "old"}})) == 422);
    CHECK(post(path, answer(1)) == 422);

    CHECK(post(path, answer(right)) == 204);
    CHECK(post(path, answer(right)) == 204);
    json other = {{"city", right["city"]}, {"period", right["period"] == "old" ? "new" : "old"}};
    CHECK(post(path, answer(other)) == 409);

    const auto matching = std::find_if(s.matching_sets[0].image_ids.begin(), s.matching_sets[0].image_ids.end(),
                                       [](const auto&) { return true; });
    const auto mid = matching_item_id(s.matching_sets[0], *matching);
    CHECK(post(path, json{{"item_id", mid}, {"answer", 3}}.dump()) == 422);
    CHECK(post(path, json{{"item_id", mid}, {"answer", "1"}}.dump()) == 422);
    CHECK(post(path, json{{"item_id", mid}, {"answer", 2}}.dump()) == 204);

    const auto next = json::parse(c.Get("/api/sessions/" + sid + "/next")->body);
    CHECK(next["item"]["item_id"] != item);
    CHECK(next["progress"]["answered"] == 2);
    service.stop();

    // One line per accepted response plus the session line.
    const auto log = read_log(dir / "log" / "responses.jsonl");
    CHECK(log.size() == 3);
    CHECK_FALSE(log[1].timestamp.empty());

    // A restarted service resumes from the log.
    StudyService again(s, dir / "log" / "responses.jsonl");
    const int port2 = again.start("127.0.0.1", 0);
    httplib::Client c2("127.0.0.1", port2);
    const auto resumed = json::parse(c2.Get("/api/sessions/" + sid + "/next")->body);
    CHECK(resumed == next);
    CHECK(c2.Post(path, answer(right), "application/json")->status == 204);
    CHECK(c2.Post(path, answer(other), "application/json")->status == 409);
    again.stop();
}

TEST_CASE("HTTP service: two concurrent sessions keep independent tallies") {
    testutil::TempDir dir;
    const auto corpus = make_corpus(dir, 12);
    const auto s = build_study("pilot", corpus, ranked_list(), 8, 4, 10, 8);
    StudyService service(s, dir / "responses.jsonl");
    const int port = service.start("127.0.0.1", 0);

    const auto good = perfect_answers(s);
    const auto bad = perfect_answers(s, true);
    std::atomic<bool> failed{false};
    std::size_t done_good = 0, done_bad = 0;
    auto run = [&](const std::string& group, const std::map<std::string, json>& answers, std::size_t& count) {
        try {
            Participant p(port, group);
            while (p.step(answers)) {
            }
            count = p.answered;
        } catch (...) {
            failed = true;
        }
    };
    std::thread t1(run, "professional", std::cref(good), std::ref(done_good));
    std::thread t2(run, "non-professional", std::cref(bad), std::ref(done_bad));
    t1.join();
    t2.join();
    REQUIRE_FALSE(failed);
    CHECK(done_good == 88);
    CHECK(done_bad == 88);

    const auto r = service.results();
    CHECK(*r.groups.at("professional").accuracy == 1.0);
    CHECK(r.groups.at("professional").phi_by_dimension.at("city") == 1.0);
    CHECK(r.groups.at("non-professional").phi_by_dimension.at("city") == -1.0);
    CHECK(r.groups.at("non-professional").phi_by_dimension.at("period") == -1.0);
    for (const auto& set : r.groups.at("non-professional").sets) CHECK(set.confusion == cm(0, 10, 10, 0));
    service.stop();
    CHECK(to_json(aggregate(s, read_log(dir / "responses.jsonl"))) == to_json(r));
}
