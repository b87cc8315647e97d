#include "urbansense/evalstudy.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include <httplib.h>

#include "urbansense/digest.hpp"
#include "urbansense/error.hpp"
#include "urbansense/io.hpp"
#include "urbansense/log.hpp"
#include "urbansense/rng.hpp"

namespace urbansense::study {

using nlohmann::json;

const char* to_string(ParticipantGroup g) noexcept {
    return g == ParticipantGroup::Professional ? "professional" : "non-professional";
}

ParticipantGroup participant_group_from_string(std::string_view s) {
    if (s == "professional") return ParticipantGroup::Professional;
    if (s == "non-professional") return ParticipantGroup::NonProfessional;
    throw Error(ErrorKind::Validation, "unknown participant group '" + std::string(s) + "'");
}

namespace {

json label_json(const Label& l) { return {{"city", l.first}, {"period", l.second}}; }
Label label_from(const json& j) { return {j.at("city").get<std::string>(), j.at("period").get<std::string>()}; }
std::string label_text(const Label& l) { return l.first + ":" + l.second; }

// Partial Fisher-Yates: the first `count` entries of a seeded shuffle.
template <class T>
std::vector<T> sample(std::vector<T> items, std::size_t count, Pcg32& rng) {
    count = std::min(count, items.size());
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + rng.bounded(static_cast<std::uint32_t>(items.size() - i));
        std::swap(items[i], items[j]);
    }
    items.resize(count);
    return items;
}

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

json to_json(const Study& s) {
    json tasks = json::array();
    for (const auto& t : s.category_tasks) {
        json choices = json::array();
        for (const auto& c : t.choices) choices.push_back(label_json(c));
        tasks.push_back({{"task_id", t.task_id}, {"image_id", t.image_id}, {"choices", choices},
                         {"ground_truth", label_json(t.ground_truth)}});
    }
    json sets = json::array();
    for (const auto& m : s.matching_sets)
        sets.push_back({{"set_id", m.set_id}, {"pair", m.pair}, {"dimension", m.dimension}, {"image_ids", m.image_ids},
                        {"description_1", m.description_1}, {"description_2", m.description_2},
                        {"ground_truth", m.ground_truth}});
    return {{"study_id", s.study_id}, {"category_tasks", tasks}, {"matching_sets", sets}, {"images", s.image_paths},
            {"participant_groups", {"professional", "non-professional"}}};
}

Study study_from_json(const json& j) {
    try {
        Study s;
        s.study_id = j.at("study_id").get<std::string>();
        for (const auto& t : j.at("category_tasks")) {
            CategoryTask c;
            c.task_id = t.at("task_id").get<std::string>();
            c.image_id = t.at("image_id").get<std::string>();
            for (const auto& x : t.at("choices")) c.choices.push_back(label_from(x));
            c.ground_truth = label_from(t.at("ground_truth"));
            s.category_tasks.push_back(std::move(c));
        }
        for (const auto& m : j.at("matching_sets")) {
            MatchingSet x;
            x.set_id = m.at("set_id").get<std::string>();
            x.pair = m.value("pair", std::string());
            x.dimension = m.value("dimension", std::string("mixed"));
            x.image_ids = m.at("image_ids").get<std::vector<std::string>>();
            x.description_1 = m.at("description_1").get<std::string>();
            x.description_2 = m.at("description_2").get<std::string>();
            x.ground_truth = m.at("ground_truth").get<std::map<std::string, int>>();
            s.matching_sets.push_back(std::move(x));
        }
        s.image_paths = j.at("images").get<std::map<std::string, std::string>>();
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Schema, std::string("study definition: ") + e.what());
    }
}

Study load_study(const std::filesystem::path& path) {
    try {
        return study_from_json(json::parse(io::read_file(path)));
    } catch (const json::parse_error&) {
        throw Error(ErrorKind::Validation, "study definition is not JSON: " + path.string());
    }
}

void save_study(const Study& s, const std::filesystem::path& path) {
    io::write_file_atomic(path, to_json(s).dump(2) + "\n");
}

std::vector<CategoryTask> build_category_tasks(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
    const auto labels = corpus.label_space();
    if (labels.size() < 2) throw Error(ErrorKind::Validation, "category tasks need at least two categories");
    if (n == 0) throw Error(ErrorKind::Validation, "category task count must be >= 1");
    const std::vector<Label> choices(labels.begin(), labels.end());
    std::vector<CategoryTask> tasks;
    for (std::size_t li = 0; li < choices.size(); ++li) {
        const auto& label = choices[li];
        const std::size_t want = n / choices.size() + (li < n % choices.size() ? 1 : 0);
        if (want == 0) continue;
        std::vector<std::string> ids;
        for (const auto& r : corpus.records())
            if (r.city == label.first && r.period == label.second) ids.push_back(r.id);
        std::sort(ids.begin(), ids.end());
        if (ids.size() < want)
            throw Error(ErrorKind::Validation, "category " + label_text(label) + " has " + std::to_string(ids.size()) +
                                                   " image(s), " + std::to_string(want) + " needed");
        Pcg32 rng(derive_seed(seed, "category:" + label_text(label)));
        for (auto& id : sample(ids, want, rng)) tasks.push_back({"", std::move(id), choices, label});
    }
    Pcg32 order(derive_seed(seed, "category-order"));
    order.shuffle(tasks);
    for (std::size_t i = 0; i < tasks.size(); ++i) tasks[i].task_id = "cat-" + std::to_string(i + 1);
    return tasks;
}

std::vector<MatchingSet> build_matching_sets(const Corpus& corpus, const std::vector<assess::ScoredDescription>& ranked,
                                             std::size_t sets, std::size_t per_side, std::uint64_t seed) {
    if (sets == 0 || per_side == 0) throw Error(ErrorKind::Validation, "sets and per_side must be >= 1");
    std::set<std::string> pair_labels;
    for (const auto& s : ranked)
        if (s.scored && s.significant) pair_labels.insert(s.candidate.pair);
    if (pair_labels.empty())
        throw Error(ErrorKind::Validation, "matching sets need at least one significant description per direction; none given");

    struct PairPlan {
        std::string label;
        ComparisonPair pair;
        GroupPartition groups;
        std::string desc_a, desc_b;
    };
    std::vector<PairPlan> plans;
    for (const auto& label : pair_labels) {
        PairPlan p{label, parse_pair(label), {}, {}, {}};
        p.groups = partition(corpus, p.pair.a, p.pair.b);
        for (const auto& s : ranked)
            if (s.scored && s.significant && s.candidate.pair == label && s.d_y > 0) {
                p.desc_a = s.candidate.text;
                break;
            }
        for (auto it = ranked.rbegin(); it != ranked.rend(); ++it)
            if (it->scored && it->significant && it->candidate.pair == label && it->d_y < 0) {
                p.desc_b = it->candidate.text;
                break;
            }
        if (p.desc_a.empty() || p.desc_b.empty())
            throw Error(ErrorKind::Validation, "pair " + label + ": no significant description for side " +
                                                   std::string(p.desc_a.empty() ? "A" : "B"));
        if (p.desc_a == p.desc_b) throw Error(ErrorKind::Validation, "pair " + label + ": both sides share one description");
        for (const auto* g : {&p.groups.group_a, &p.groups.group_b})
            if (g->size() < per_side)
                throw Error(ErrorKind::Validation, "pair " + label + ": a side has " + std::to_string(g->size()) +
                                                       " image(s), per_side needs " + std::to_string(per_side));
        plans.push_back(std::move(p));
    }

    std::vector<MatchingSet> out;
    for (std::size_t i = 0; i < sets; ++i) {
        const auto& p = plans[i % plans.size()];
        MatchingSet m;
        m.set_id = "set-" + std::to_string(i + 1);
        m.pair = p.label;
        const bool same_city = p.pair.a.city == p.pair.b.city;
        const bool same_period = p.pair.a.period == p.pair.b.period;
        m.dimension = same_city && !same_period ? "period" : same_period && !same_city ? "city" : "mixed";
        m.description_1 = p.desc_a;
        m.description_2 = p.desc_b;
        Pcg32 rng(derive_seed(seed, "matching:" + m.set_id));
        auto ids = [](const std::vector<ImageRecord>& g) {
            std::vector<std::string> v;
            for (const auto& r : g) v.push_back(r.id);
            return v;
        };
        for (const auto& id : sample(ids(p.groups.group_a), per_side, rng)) m.ground_truth[id] = 1;
        for (const auto& id : sample(ids(p.groups.group_b), per_side, rng)) m.ground_truth[id] = 2;
        for (const auto& [id, _] : m.ground_truth) m.image_ids.push_back(id);
        rng.shuffle(m.image_ids);
        out.push_back(std::move(m));
    }
    return out;
}

Study build_study(std::string study_id, const Corpus& corpus, const std::vector<assess::ScoredDescription>& ranked,
                  std::size_t category_tasks, std::size_t sets, std::size_t per_side, std::uint64_t seed) {
    Study s;
    s.study_id = std::move(study_id);
    s.category_tasks = build_category_tasks(corpus, category_tasks, derive_seed(seed, "category"));
    s.matching_sets = build_matching_sets(corpus, ranked, sets, per_side, derive_seed(seed, "matching"));
    auto add = [&](const std::string& id) {
        const auto* r = corpus.find(id);
        if (!r) throw Error(ErrorKind::Internal, "study image missing from corpus: " + id);
        s.image_paths[id] = r->path;
    };
    for (const auto& t : s.category_tasks) add(t.image_id);
    for (const auto& m : s.matching_sets)
        for (const auto& id : m.image_ids) add(id);
    return s;
}

double accuracy_total(const std::vector<CategoryResponse>& responses) {
    if (responses.empty()) throw Error(ErrorKind::EmptyInput, "accuracy needs at least one response");
    std::size_t hits = 0;
    for (const auto& r : responses) hits += (r.predicted.first == r.truth.first) * (r.predicted.second == r.truth.second);
    return static_cast<double>(hits) / static_cast<double>(responses.size());
}

ConfusionMatrix2x2 confusion_2x2(const std::vector<MatchingResponse>& responses,
                                 const std::map<std::string, int>& ground_truth) {
    ConfusionMatrix2x2 m;
    for (const auto& r : responses) {
        const auto it = ground_truth.find(r.item_id);
        if (it == ground_truth.end()) throw Error(ErrorKind::Validation, "no ground truth for item '" + r.item_id + "'");
        if (r.predicted != 1 && r.predicted != 2)
            throw Error(ErrorKind::Validation, "prediction for '" + r.item_id + "' must be 1 or 2");
        const bool t1 = it->second == 1;
        const bool p1 = r.predicted == 1;
        (t1 ? (p1 ? m.a : m.b) : (p1 ? m.c : m.d)) += 1;
    }
    return m;
}

Phi phi_coefficient(const ConfusionMatrix2x2& m) {
    const long long r1 = m.a + m.b, r2 = m.c + m.d, c1 = m.a + m.c, c2 = m.b + m.d;
    if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) return {0.0, true};
    const double num = static_cast<double>(m.a * m.d - m.b * m.c);
    const double den = std::sqrt(static_cast<double>(r1) * static_cast<double>(r2)) *
                       std::sqrt(static_cast<double>(c1) * static_cast<double>(c2));
    return {std::clamp(num / den, -1.0, 1.0), false};
}

std::string category_item_id(const CategoryTask& t) { return t.task_id; }

std::string matching_item_id(const MatchingSet& s, const std::string& image_id) {
    return s.set_id + "-" + sha256_hex(s.set_id + "|" + image_id).substr(0, 12);
}

json to_json(const LogEvent& e) {
    json j = {{"type", e.type == LogEvent::Type::Session ? "session" : "response"}, {"session_id", e.session_id}};
    if (e.type == LogEvent::Type::Session) {
        j["participant_group"] = to_string(e.group);
    } else {
        j["item_id"] = e.item_id;
        j["answer"] = e.answer;
    }
    if (!e.timestamp.empty()) j["timestamp"] = e.timestamp;
    return j;
}

LogEvent log_event_from_json(const json& j) {
    LogEvent e;
    const auto type = j.at("type").get<std::string>();
    e.session_id = j.at("session_id").get<std::string>();
    e.timestamp = j.value("timestamp", std::string());
    if (type == "session") {
        e.type = LogEvent::Type::Session;
        e.group = participant_group_from_string(j.at("participant_group").get<std::string>());
    } else if (type == "response") {
        e.type = LogEvent::Type::Response;
        e.item_id = j.at("item_id").get<std::string>();
        e.answer = j.at("answer");
    } else {
        throw Error(ErrorKind::Validation, "unknown log event type '" + type + "'");
    }
    return e;
}

std::vector<LogEvent> read_log(const std::filesystem::path& path) {
    std::vector<LogEvent> out;
    if (!std::filesystem::exists(path)) return out;
    const auto lines = io::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        try {
            out.push_back(log_event_from_json(json::parse(lines[i])));
        } catch (const std::exception& e) {
            if (i + 1 == lines.size()) {
                log::warn("response log: ignoring torn final line");
                break;
            }
            throw Error(ErrorKind::Validation, "response log line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

StudyResults aggregate(const Study& study, const std::vector<LogEvent>& log) {
    std::map<std::string, ParticipantGroup> sessions;
    std::map<std::string, const CategoryTask*> category_items;
    std::map<std::string, std::pair<std::size_t, int>> matching_items;  // item -> (set index, truth)
    for (const auto& t : study.category_tasks) category_items[category_item_id(t)] = &t;
    for (std::size_t i = 0; i < study.matching_sets.size(); ++i)
        for (const auto& [img, truth] : study.matching_sets[i].ground_truth)
            matching_items[matching_item_id(study.matching_sets[i], img)] = {i, truth};

    struct Acc {
        std::size_t sessions = 0;
        std::vector<CategoryResponse> category;
        std::vector<ConfusionMatrix2x2> sets;
    };
    std::map<std::string, Acc> acc;
    for (auto g : {ParticipantGroup::Professional, ParticipantGroup::NonProfessional})
        acc[to_string(g)].sets.resize(study.matching_sets.size());

    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : log) {
        if (e.type == LogEvent::Type::Session) {
            if (sessions.emplace(e.session_id, e.group).second) ++acc[to_string(e.group)].sessions;
            continue;
        }
        const auto s = sessions.find(e.session_id);
        if (s == sessions.end() || !seen.insert({e.session_id, e.item_id}).second) continue;
        auto& a = acc[to_string(s->second)];
        if (auto c = category_items.find(e.item_id); c != category_items.end()) {
            a.category.push_back({label_from(e.answer), c->second->ground_truth});
        } else if (auto m = matching_items.find(e.item_id); m != matching_items.end()) {
            auto& cm = a.sets[m->second.first];
            const bool t1 = m->second.second == 1;
            const bool p1 = e.answer.get<int>() == 1;
            (t1 ? (p1 ? cm.a : cm.b) : (p1 ? cm.c : cm.d)) += 1;
        }
    }

    StudyResults r;
    r.study_id = study.study_id;
    for (auto& [name, a] : acc) {
        GroupResults g;
        g.sessions = a.sessions;
        g.category_responses = a.category.size();
        if (!a.category.empty()) g.accuracy = accuracy_total(a.category);
        std::map<std::string, std::pair<double, std::size_t>> dims;
        for (std::size_t i = 0; i < a.sets.size(); ++i) {
            const auto& set = study.matching_sets[i];
            SetResult sr{set.set_id, set.dimension, a.sets[i], phi_coefficient(a.sets[i])};
            if (sr.confusion.total() > 0) {
                dims[set.dimension].first += sr.phi.value;
                dims[set.dimension].second += 1;
            }
            g.sets.push_back(std::move(sr));
        }
        for (const auto& [dim, v] : dims) g.phi_by_dimension[dim] = v.first / static_cast<double>(v.second);
        r.groups[name] = std::move(g);
    }
    return r;
}

json to_json(const StudyResults& r) {
    json groups = json::object();
    for (const auto& [name, g] : r.groups) {
        json sets = json::array();
        for (const auto& s : g.sets)
            sets.push_back({{"set_id", s.set_id}, {"dimension", s.dimension},
                            {"confusion", {{"a", s.confusion.a}, {"b", s.confusion.b}, {"c", s.confusion.c}, {"d", s.confusion.d}}},
                            {"phi", s.phi.value}, {"phi_degenerate", s.phi.degenerate}});
        groups[name] = {{"sessions", g.sessions}, {"category_responses", g.category_responses},
                        {"accuracy_total", g.accuracy ? json(*g.accuracy) : json(nullptr)}, {"matching_sets", sets},
                        {"phi_by_dimension", g.phi_by_dimension}};
    }
    return {{"study_id", r.study_id}, {"groups", groups}};
}

std::string format_results_csv(const StudyResults& r) {
    std::string out = io::csv_row({"group", "metric", "set_id", "dimension", "value", "a", "b", "c", "d", "degenerate"});
    for (const auto& [name, g] : r.groups) {
        out += io::csv_row({name, "accuracy_total", "", "", g.accuracy ? io::format_double(*g.accuracy) : "", "", "", "", "", ""});
        for (const auto& [dim, v] : g.phi_by_dimension)
            out += io::csv_row({name, "phi_mean", "", dim, io::format_double(v), "", "", "", "", ""});
        for (const auto& s : g.sets)
            out += io::csv_row({name, "phi", s.set_id, s.dimension, io::format_double(s.phi.value),
                                std::to_string(s.confusion.a), std::to_string(s.confusion.b),
                                std::to_string(s.confusion.c), std::to_string(s.confusion.d),
                                s.phi.degenerate ? "true" : "false"});
    }
    return out;
}

// ---------------------------------------------------------------------------------------
// HTTP service

namespace {

struct Item {
    std::string item_id;
    bool category = true;
    std::size_t index = 0;  // task index or set index
    std::string image_id;
};

std::string new_session_id() {
    std::random_device rd;
    std::string raw;
    for (int i = 0; i < 4; ++i) raw += std::to_string(rd());
    return sha256_hex(raw + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count())).substr(0, 32);
}

std::string mime_for(const std::filesystem::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".webp") return "image/webp";
    if (ext == ".gif") return "image/gif";
    if (ext == ".ppm") return "image/x-portable-pixmap";
    return "application/octet-stream";
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

}  // namespace

struct StudyService::Impl {
    Study study;
    std::filesystem::path log_path;
    std::optional<std::filesystem::path> ui_dir;
    std::vector<Item> items;
    std::map<std::string, std::size_t> item_index;
    std::map<std::string, std::string> image_by_key;  // opaque key -> image id

    mutable std::mutex mutex;
    std::vector<LogEvent> events;
    std::map<std::string, ParticipantGroup> sessions;
    std::map<std::string, std::map<std::string, json>> answers;  // session -> item -> answer
    int fd = -1;

    httplib::Server server;
    std::thread thread;

    std::string key_for(const std::string& image_id) const {
        return sha256_hex(study.study_id + "|" + image_id).substr(0, 24);
    }

    void apply(const LogEvent& e) {
        if (e.type == LogEvent::Type::Session) {
            sessions.emplace(e.session_id, e.group);
            answers[e.session_id];
        } else {
            answers[e.session_id].emplace(e.item_id, e.answer);
        }
        events.push_back(e);
    }

    void append(LogEvent e) {
        e.timestamp = now_iso8601();
        const std::string line = to_json(e).dump() + "\n";
        const char* p = line.data();
        std::size_t left = line.size();
        while (left > 0) {
            const auto n = ::write(fd, p, left);
            if (n < 0) throw Error(ErrorKind::Io, "response log write failed: " + log_path.string());
            p += n;
            left -= static_cast<std::size_t>(n);
        }
        if (::fsync(fd) != 0) throw Error(ErrorKind::Io, "response log fsync failed: " + log_path.string());
        apply(e);
    }

    json item_payload(const Item& it) const {
        json j = {{"item_id", it.item_id}, {"image_url", "/images/" + key_for(it.image_id)}};
        if (it.category) {
            j["kind"] = "category";
            json choices = json::array();
            for (const auto& c : study.category_tasks[it.index].choices) choices.push_back(label_json(c));
            j["choices"] = choices;
        } else {
            const auto& set = study.matching_sets[it.index];
            j["kind"] = "matching";
            j["descriptions"] = {set.description_1, set.description_2};
        }
        return j;
    }

    // Empty string when valid, otherwise the reason.
    std::string check_answer(const Item& it, const json& answer) const {
        if (it.category) {
            if (!answer.is_object() || !answer.contains("city") || !answer.contains("period") ||
                !answer["city"].is_string() || !answer["period"].is_string())
                return "category answer must be {\"city\": ..., \"period\": ...}";
            const Label l = label_from(answer);
            const auto& choices = study.category_tasks[it.index].choices;
            if (std::find(choices.begin(), choices.end(), l) == choices.end()) return "answer is not one of the offered categories";
            return {};
        }
        if (!answer.is_number_integer() || (answer.get<int>() != 1 && answer.get<int>() != 2))
            return "matching answer must be 1 or 2";
        return {};
    }

    void routes() {
        server.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception&) {
                return send_error(res, 400, "body is not JSON");
            }
            if (!body.is_object() || !body.contains("participant_group") || !body["participant_group"].is_string())
                return send_error(res, 400, "participant_group is required");
            ParticipantGroup g;
            try {
                g = participant_group_from_string(body["participant_group"].get<std::string>());
            } catch (const Error& e) {
                return send_error(res, 422, e.what());
            }
            std::lock_guard lock(mutex);
            LogEvent e;
            e.type = LogEvent::Type::Session;
            e.session_id = new_session_id();
            e.group = g;
            append(e);
            send_json(res, 201, {{"session_id", e.session_id}, {"total", items.size()}});
        });

        server.Get(R"(/api/sessions/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string sid = req.matches[1];
            std::lock_guard lock(mutex);
            const auto a = answers.find(sid);
            if (!sessions.count(sid) || a == answers.end()) return send_error(res, 404, "unknown session");
            const json progress = {{"answered", a->second.size()}, {"total", items.size()}};
            for (const auto& it : items)
                if (!a->second.count(it.item_id))
                    return send_json(res, 200, {{"done", false}, {"item", item_payload(it)}, {"progress", progress}});
            send_json(res, 200, {{"done", true}, {"progress", progress}});
        });

        server.Post(R"(/api/sessions/([^/]+)/responses)", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string sid = req.matches[1];
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception&) {
                return send_error(res, 400, "body is not JSON");
            }
            if (!body.is_object() || !body.contains("item_id") || !body["item_id"].is_string() || !body.contains("answer"))
                return send_error(res, 400, "body needs item_id and answer");
            std::lock_guard lock(mutex);
            if (!sessions.count(sid)) return send_error(res, 404, "unknown session");
            const auto item_id = body["item_id"].get<std::string>();
            const auto idx = item_index.find(item_id);
            if (idx == item_index.end()) return send_error(res, 422, "unknown item '" + item_id + "'");
            const auto& answer = body["answer"];
            if (auto why = check_answer(items[idx->second], answer); !why.empty()) return send_error(res, 422, why);
            auto& mine = answers[sid];
            if (auto prev = mine.find(item_id); prev != mine.end()) {
                if (prev->second == answer) {
                    res.status = 204;
                    return;
                }
                return send_error(res, 409, "item already answered differently");
            }
            LogEvent e;
            e.type = LogEvent::Type::Response;
            e.session_id = sid;
            e.item_id = item_id;
            e.answer = answer;
            try {
                append(e);
            } catch (const Error& err) {
                return send_error(res, 500, err.what());
            }
            res.status = 204;
        });

        server.Get(R"(/api/studies/([^/]+)/results)", [this](const httplib::Request& req, httplib::Response& res) {
            if (req.matches[1] != study.study_id) return send_error(res, 404, "unknown study");
            std::lock_guard lock(mutex);
            send_json(res, 200, to_json(aggregate(study, events)));
        });

        server.Get(R"(/images/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const auto it = image_by_key.find(req.matches[1]);
            if (it == image_by_key.end()) return send_error(res, 404, "unknown image");
            const auto& path = study.image_paths.at(it->second);
            try {
                res.set_content(io::read_file(path), mime_for(path));
            } catch (const Error&) {
                send_error(res, 404, "image unavailable");
            }
        });

        if (ui_dir && !server.set_mount_point("/", ui_dir->string()))
            throw Error(ErrorKind::Io, "UI directory not found: " + ui_dir->string());
    }
};

StudyService::StudyService(Study study, std::filesystem::path log_path, std::optional<std::filesystem::path> ui_dir)
    : impl_(std::make_unique<Impl>()) {
    auto& m = *impl_;
    m.study = std::move(study);
    m.log_path = std::move(log_path);
    m.ui_dir = std::move(ui_dir);
    for (std::size_t i = 0; i < m.study.category_tasks.size(); ++i) {
        const auto& t = m.study.category_tasks[i];
        m.items.push_back({category_item_id(t), true, i, t.image_id});
    }
    for (std::size_t s = 0; s < m.study.matching_sets.size(); ++s)
        for (const auto& img : m.study.matching_sets[s].image_ids)
            m.items.push_back({matching_item_id(m.study.matching_sets[s], img), false, s, img});
    for (std::size_t i = 0; i < m.items.size(); ++i) m.item_index[m.items[i].item_id] = i;
    for (const auto& [id, _] : m.study.image_paths) m.image_by_key[m.key_for(id)] = id;

    for (const auto& e : read_log(m.log_path)) m.apply(e);
    if (m.log_path.has_parent_path()) std::filesystem::create_directories(m.log_path.parent_path());
    m.fd = ::open(m.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (m.fd < 0) throw Error(ErrorKind::Io, "cannot open response log " + m.log_path.string());
    m.routes();
}

StudyService::~StudyService() {
    stop();
    if (impl_->fd >= 0) ::close(impl_->fd);
}

int StudyService::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw Error(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void StudyService::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) throw Error(ErrorKind::Io, "cannot listen on " + host + ":" + std::to_string(port));
}

void StudyService::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

StudyResults StudyService::results() const {
    std::lock_guard lock(impl_->mutex);
    return aggregate(impl_->study, impl_->events);
}

const Study& StudyService::study() const noexcept { return impl_->study; }

std::string StudyService::image_key(const std::string& image_id) const { return impl_->key_for(image_id); }

}  // namespace urbansense::study
