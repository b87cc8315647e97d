#include "urbansense/mock.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "urbansense/digest.hpp"
#include "urbansense/error.hpp"
#include "urbansense/rng.hpp"
#include "urbansense/textmine.hpp"

namespace urbansense::providers {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void normalize(std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0)
        for (double& x : v) x /= n;
}

HttpResponse ok_json(const json& j) { return {200, j.dump()}; }

HttpResponse chat_response(const std::string& model, const std::string& text) {
    return ok_json({{"object", "chat.completion"},
                    {"model", model},
                    {"choices", json::array({{{"index", 0},
                                              {"finish_reason", "stop"},
                                              {"message", {{"role", "assistant"}, {"content", text}}}}})}});
}

std::string header(const HttpRequest& r, const std::string& name) {
    for (const auto& [k, v] : r.headers) {
        if (k.size() != name.size()) continue;
        if (std::equal(k.begin(), k.end(), name.begin(),
                       [](char a, char b) { return std::tolower((unsigned char)a) == std::tolower((unsigned char)b); }))
            return v;
    }
    return {};
}

std::vector<std::string> string_list(const json& args, const char* key) {
    std::vector<std::string> out;
    if (args.contains(key) && args[key].is_array())
        for (const auto& x : args[key])
            if (x.is_string()) out.push_back(x.get<std::string>());
    return out;
}

std::set<std::string> content_tokens(std::string_view text) {
    std::set<std::string> out;
    for (auto& t : textmine::tokenize(text))
        if (!textmine::is_stopword(t)) out.insert(std::move(t));
    return out;
}

// Tokens ranked by (share of own captions containing it) - (share of other captions).
std::vector<std::string> distinctive_tokens(const std::vector<std::string>& own, const std::vector<std::string>& other) {
    std::map<std::string, double> score;
    auto add = [&](const std::vector<std::string>& docs, double sign) {
        if (docs.empty()) return;
        const double w = sign / static_cast<double>(docs.size());
        for (const auto& d : docs)
            for (const auto& t : content_tokens(d)) score[t] += w;
    };
    add(own, 1.0);
    add(other, -1.0);
    std::vector<std::pair<std::string, double>> ranked;
    for (const auto& [t, s] : score)
        if (s > 1e-12) ranked.emplace_back(t, s);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (auto& r : ranked) out.push_back(std::move(r.first));
    return out;
}

std::vector<std::string> phrases_from_tokens(const std::vector<std::string>& toks, std::size_t k, const std::string& side) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < toks.size() && out.size() < k; ++i) out.push_back("Streetscapes featuring " + toks[i]);
    for (std::size_t i = 0; i + 1 < toks.size() && out.size() < k; ++i)
        for (std::size_t j = i + 1; j < toks.size() && out.size() < k; ++j)
            out.push_back("Streetscapes featuring " + toks[i] + " and " + toks[j]);
    for (std::size_t v = 1; out.size() < k; ++v)
        out.push_back("Streetscapes typical of group " + side + " (variant " + std::to_string(v) + ")");
    return out;
}

}  // namespace

MockBackend::MockBackend(MockOptions options) : options_(std::move(options)) {
    if (options_.dim == 0) throw Error(ErrorKind::Validation, "mock: dim must be positive");
    if (options_.planted_weight < 0.0 || options_.planted_weight > 1.0)
        throw Error(ErrorKind::Validation, "mock: planted_weight must be in [0, 1]");
    for (const auto& [tok, idx] : options_.planted)
        if (idx >= options_.dim)
            throw Error(ErrorKind::Validation, "mock: planted index for '" + tok + "' exceeds dim");
}

void MockBackend::register_image_content(const std::string& digest, std::string content) {
    std::lock_guard lock(mutex_);
    content_[digest] = std::move(content);
}

std::vector<double> MockBackend::embed_raw(std::string_view text) const {
    auto tokens = textmine::tokenize(text);
    if (tokens.empty()) tokens.push_back(text.empty() ? std::string("<empty>") : std::string(text));

    std::vector<double> hashed(options_.dim, 0.0);
    std::vector<double> planted(options_.dim, 0.0);
    std::map<std::string, int> counts;
    for (const auto& t : tokens) ++counts[t];
    for (const auto& [tok, n] : counts) {
        Pcg32 rng(options_.seed ^ fnv1a(tok), 0x6d6f636bULL);
        for (double& x : hashed) x += n * rng.normal();
        if (auto it = options_.planted.find(tok); it != options_.planted.end()) planted[it->second] += n;
    }
    normalize(hashed);
    normalize(planted);
    const bool has_planted = std::any_of(planted.begin(), planted.end(), [](double x) { return x != 0.0; });
    const double w = has_planted ? options_.planted_weight : 0.0;
    std::vector<double> v(options_.dim);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (1.0 - w) * hashed[i] + w * planted[i];
    normalize(v);
    return v;
}

std::string MockBackend::content_for(const std::string& image_url) const {
    std::string digest;
    if (image_url.rfind("data:", 0) == 0) {
        const auto comma = image_url.find(',');
        digest = sha256_hex(base64_decode(comma == std::string::npos ? "" : image_url.substr(comma + 1)));
    } else if (image_url.rfind("sha256:", 0) == 0) {
        digest = image_url.substr(7);
    } else {
        digest = sha256_hex(image_url);
    }
    std::lock_guard lock(mutex_);
    if (auto it = content_.find(digest); it != content_.end()) return it->second;
    return "image " + digest.substr(0, 16);
}

std::string MockBackend::chat_reply(const std::string& task, const json& args,
                                    const std::vector<std::string>& image_urls) const {
    const std::size_t k = args.value("k", std::size_t{5});
    if (task == "caption") {
        if (image_urls.empty()) return "an empty scene";
        const std::string content = content_for(image_urls.front());
        if (content.rfind("image ", 0) != 0) return content;
        // Unregistered image: a stable caption derived from (image, prompt).
        const std::string prompt = args.value("prompt", std::string());
        return "scene " + sha256_hex(content + "|" + prompt).substr(0, 12);
    }
    if (task == "judge") {
        const std::string subject = args.contains("subject_text") ? args["subject_text"].get<std::string>()
                                    : image_urls.empty()          ? std::string()
                                                                  : content_for(image_urls.front());
        const auto a = content_tokens(subject);
        bool overlap = false;
        for (const auto& t : content_tokens(args.value("description", std::string())))
            if (a.count(t)) overlap = true;
        return overlap ? "Yes, it matches." : "No, it does not match.";
    }
    if (task == "propose-captions") {
        const auto ca = string_list(args, "captions_a");
        const auto cb = string_list(args, "captions_b");
        return json{{"A", phrases_from_tokens(distinctive_tokens(ca, cb), k, "A")},
                    {"B", phrases_from_tokens(distinctive_tokens(cb, ca), k, "B")}}
            .dump();
    }
    if (task == "propose-embedding") {
        auto pa = string_list(args, "phrases_a");
        auto pb = string_list(args, "phrases_b");
        if (pa.size() > k) pa.resize(k);
        if (pb.size() > k) pb.resize(k);
        return json{{"A", pa}, {"B", pb}}.dump();
    }
    if (task == "propose-grid") {
        std::vector<std::string> a, b;
        const std::string da = image_urls.size() > 0 ? sha256_hex(image_urls[0]).substr(0, 8) : "none";
        const std::string db = image_urls.size() > 1 ? sha256_hex(image_urls[1]).substr(0, 8) : "none";
        for (std::size_t i = 1; i <= k; ++i) {
            a.push_back("Grid A impression " + std::to_string(i) + " (" + da + ")");
            b.push_back("Grid B impression " + std::to_string(i) + " (" + db + ")");
        }
        return json{{"A", a}, {"B", b}}.dump();
    }
    return "mock reply";
}

HttpResponse MockBackend::post(const HttpRequest& request) {
    json body;
    try {
        body = json::parse(request.body);
    } catch (const json::exception&) {
        return {400, R"({"error":"request body is not JSON"})"};
    }
    const std::string model = body.value("model", std::string("mock"));
    const auto ends_with = [&](std::string_view suffix) {
        return request.url.size() >= suffix.size() &&
               request.url.compare(request.url.size() - suffix.size(), suffix.size(), suffix) == 0;
    };

    if (ends_with("/v1/embeddings")) {
        if (!body.contains("input")) return {400, R"({"error":"missing input"})"};
        std::vector<std::string> texts;
        const auto& in = body["input"];
        auto one = [&](const json& x) {
            if (x.is_string()) texts.push_back(x.get<std::string>());
            else if (x.is_object() && x.contains("image")) texts.push_back(content_for(x["image"].get<std::string>()));
        };
        if (in.is_array()) for (const auto& x : in) one(x);
        else one(in);
        if (texts.empty()) return {400, R"({"error":"empty input"})"};
        json data = json::array();
        for (std::size_t i = 0; i < texts.size(); ++i)
            data.push_back({{"object", "embedding"}, {"index", i}, {"embedding", embed_raw(texts[i])}});
        return ok_json({{"object", "list"}, {"model", model}, {"data", data}});
    }

    if (ends_with("/v1/chat/completions")) {
        std::vector<std::string> images;
        std::string first_text;
        for (const auto& m : body.value("messages", json::array())) {
            const auto& c = m.value("content", json());
            if (c.is_string()) {
                if (first_text.empty()) first_text = c.get<std::string>();
            } else if (c.is_array()) {
                for (const auto& p : c) {
                    if (p.value("type", "") == "image_url") images.push_back(p["image_url"].value("url", ""));
                    else if (p.value("type", "") == "text" && first_text.empty()) first_text = p.value("text", "");
                }
            }
        }
        json args = json::object();
        if (const auto raw = header(request, "X-Urbansense-Args"); !raw.empty()) {
            try {
                args = json::parse(raw);
            } catch (const json::exception&) {
                return {400, R"({"error":"bad X-Urbansense-Args"})"};
            }
        }
        if (!args.contains("prompt")) args["prompt"] = first_text;
        return chat_response(model, chat_reply(header(request, "X-Urbansense-Task"), args, images));
    }
    return {404, R"({"error":"unknown path"})"};
}

}  // namespace urbansense::providers
