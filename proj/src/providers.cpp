#include "urbansense/providers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "urbansense/digest.hpp"
#include "urbansense/io.hpp"
#include "urbansense/log.hpp"

namespace urbansense::providers {

using nlohmann::json;

namespace {

bool is_remote(const std::string& path) {
    return path.rfind("http://", 0) == 0 || path.rfind("https://", 0) == 0;
}

std::string mime_for(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".webp") return "image/webp";
    if (ext == ".gif") return "image/gif";
    if (ext == ".bmp") return "image/bmp";
    if (ext == ".ppm" || ext == ".pnm") return "image/x-portable-pixmap";
    return "application/octet-stream";
}

json message_to_json(const ChatMessage& m, bool for_key) {
    if (m.parts.size() == 1 && !m.parts[0].image) return {{"role", m.role}, {"content", m.parts[0].text}};
    json content = json::array();
    for (const auto& p : m.parts) {
        if (p.image) {
            const std::string url = for_key ? "sha256:" + p.image->digest : p.image->wire_url;
            content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
        } else {
            content.push_back({{"type", "text"}, {"text", p.text}});
        }
    }
    return {{"role", m.role}, {"content", content}};
}

void require_kind(const ProviderClient& c, ProviderKind expected) {
    if (c.config().kind != expected)
        throw Error(ErrorKind::Validation, "provider '" + c.name() + "' is configured as " +
                                               to_string(c.config().kind) + ", expected " + to_string(expected));
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

const char* to_string(ProviderKind kind) noexcept {
    switch (kind) {
        case ProviderKind::Captioner: return "captioner";
        case ProviderKind::Embedder: return "embedder";
        case ProviderKind::Judge: return "judge";
    }
    return "?";
}

ProviderKind provider_kind_from_string(std::string_view s) {
    if (s == "captioner") return ProviderKind::Captioner;
    if (s == "embedder") return ProviderKind::Embedder;
    if (s == "judge") return ProviderKind::Judge;
    throw Error(ErrorKind::Validation, "unknown provider kind '" + std::string(s) + "'");
}

void ProviderConfig::validate() const {
    if (endpoint.empty()) throw Error(ErrorKind::Validation, std::string(to_string(kind)) + ": endpoint is empty");
    if (model.empty()) throw Error(ErrorKind::Validation, std::string(to_string(kind)) + ": model is empty");
    if (!(timeout_s > 0.0)) throw Error(ErrorKind::Validation, std::string(to_string(kind)) + ": timeout must be > 0");
    if (max_parallel < 1 || max_parallel > 1024)
        throw Error(ErrorKind::Validation, std::string(to_string(kind)) + ": max_parallel must be in [1, 1024]");
    if (retry.max_attempts < 1 || retry.base_backoff_s < 0.0)
        throw Error(ErrorKind::Validation, std::string(to_string(kind)) + ": retry needs >= 1 attempt and backoff >= 0");
    if (dim && *dim == 0) throw Error(ErrorKind::Validation, "embedder: dim must be positive");
}

ImagePayload load_image(const ImageRef& image) {
    if (is_remote(image.path)) return {image.path, sha256_hex(image.path)};
    const std::string bytes = io::read_file(image.path);
    return {"data:" + mime_for(image.path) + ";base64," + base64_encode(bytes), sha256_hex(bytes)};
}

std::string image_digest(const ImageRef& image) {
    if (is_remote(image.path)) return sha256_hex(image.path);
    return sha256_hex(io::read_file(image.path));
}

ProviderClient::ProviderClient(ProviderConfig config, std::shared_ptr<Transport> transport,
                               std::shared_ptr<ResponseCache> cache, SleepFn sleep)
    : config_(std::move(config)),
      name_(to_string(config_.kind)),
      transport_(std::move(transport)),
      cache_(std::move(cache)),
      sleep_(sleep ? std::move(sleep)
                   : SleepFn([](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); })),
      slots_(std::max(1, config_.max_parallel)) {
    config_.validate();
    if (!transport_) throw Error(ErrorKind::Internal, "provider client without a transport");
}

ClientStats ProviderClient::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

std::string ProviderClient::fetch_uncached(const std::string& path, const std::string& body, const std::string& task,
                                           const json& args) {
    HttpRequest req;
    std::string base = config_.endpoint;
    while (!base.empty() && base.back() == '/') base.pop_back();
    req.url = base + path;
    req.body = body;
    req.timeout_s = config_.timeout_s;
    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key || !*key)
            throw Error(ErrorKind::ProviderAuth, name_ + ": API key variable " + config_.api_key_env + " is not set");
        req.headers["Authorization"] = std::string("Bearer ") + key;
    }
    if (!task.empty()) req.headers["X-Urbansense-Task"] = task;
    if (!args.empty()) req.headers["X-Urbansense-Args"] = args.dump(-1, ' ', true);

    slots_.acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{slots_};

    std::string last_error;
    for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        {
            std::lock_guard lock(mutex_);
            ++stats_.network_calls;
        }
        try {
            const auto res = transport_->post(req);
            if (res.status >= 200 && res.status < 300) return res.body;
            if (res.status == 401 || res.status == 403)
                throw Error(ErrorKind::ProviderAuth, name_ + ": HTTP " + std::to_string(res.status) + " from " + req.url);
            if (res.status != 408 && res.status != 429 && res.status < 500)
                throw Error(ErrorKind::ProviderProtocol, name_ + ": HTTP " + std::to_string(res.status) + " from " +
                                                             req.url + ": " + res.body.substr(0, 200));
            last_error = "HTTP " + std::to_string(res.status);
        } catch (const TransportError& e) {
            last_error = e.what();
        }
        {
            std::lock_guard lock(mutex_);
            ++stats_.failed_attempts;
        }
        log::warn(name_ + ": attempt " + std::to_string(attempt) + "/" + std::to_string(config_.retry.max_attempts) +
                  " failed: " + last_error);
        if (attempt < config_.retry.max_attempts) sleep_(config_.retry.base_backoff_s * std::ldexp(1.0, attempt - 1));
    }
    throw Error(ErrorKind::Provider, name_ + ": giving up after " + std::to_string(config_.retry.max_attempts) +
                                         " attempt(s): " + last_error);
}

ProviderClient::Fetched ProviderClient::fetch(const std::string& path, const json& wire, const json& key_payload,
                                              const std::string& task, const json& args,
                                              const std::function<void(const std::string&)>& validate) {
    const json key_doc = {{"kind", to_string(config_.kind)}, {"model", config_.model}, {"path", path}, {"payload", key_payload}};
    const std::string key = sha256_hex(key_doc.dump());
    {
        std::lock_guard lock(mutex_);
        ++stats_.requests;
    }
    if (cache_) {
        if (auto hit = cache_->get(key)) {
            validate(*hit);
            std::lock_guard lock(mutex_);
            ++stats_.cache_hits;
            return {std::move(*hit), key};
        }
    }

    std::promise<std::string> promise;
    {
        std::unique_lock lock(mutex_);
        if (auto it = inflight_.find(key); it != inflight_.end()) {
            auto fut = it->second;
            lock.unlock();
            return {fut.get(), key};
        }
        inflight_.emplace(key, promise.get_future().share());
    }
    try {
        std::string body = fetch_uncached(path, wire.dump(), task, args);
        validate(body);
        if (cache_) cache_->put(key, body, {{"kind", to_string(config_.kind)}, {"model", config_.model}, {"path", path}});
        promise.set_value(body);
        std::lock_guard lock(mutex_);
        inflight_.erase(key);
        return {std::move(body), key};
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::lock_guard lock(mutex_);
        inflight_.erase(key);
        throw;
    }
}

std::string ProviderClient::chat(const ChatRequest& request) {
    json wire = {{"model", config_.model}, {"temperature", config_.temperature}};
    json key = wire;
    wire["messages"] = json::array();
    key["messages"] = json::array();
    for (const auto& m : request.messages) {
        wire["messages"].push_back(message_to_json(m, false));
        key["messages"].push_back(message_to_json(m, true));
    }
    if (request.seed) {
        wire["seed"] = *request.seed;
        key["seed"] = *request.seed;
    }
    auto extract = [this](const std::string& body) -> std::string {
        json j;
        try {
            j = json::parse(body);
        } catch (const json::exception&) {
            throw Error(ErrorKind::ProviderProtocol, name_ + ": chat response is not JSON");
        }
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
            throw Error(ErrorKind::ProviderProtocol, name_ + ": chat response has no choices");
        const auto& msg = j["choices"][0].value("message", json::object());
        if (!msg.contains("content") || !msg["content"].is_string())
            throw Error(ErrorKind::ProviderProtocol, name_ + ": chat response has no text content");
        return msg["content"].get<std::string>();
    };
    auto fetched = fetch("/v1/chat/completions", wire, key, request.task, request.args,
                         [&](const std::string& b) { extract(b); });
    return extract(fetched.body);
}

EmbeddingVector ProviderClient::embed(const json& input_wire, const json& input_key, const std::string& task) {
    const json wire = {{"model", config_.model}, {"input", input_wire}};
    const json key = {{"model", config_.model}, {"input", input_key}};
    auto extract = [this](const std::string& body) -> std::vector<double> {
        json j;
        try {
            j = json::parse(body);
        } catch (const json::exception&) {
            throw Error(ErrorKind::ProviderProtocol, name_ + ": embedding response is not JSON");
        }
        if (!j.contains("data") || !j["data"].is_array() || j["data"].empty() || !j["data"][0].contains("embedding"))
            throw Error(ErrorKind::ProviderProtocol, name_ + ": embedding response has no data");
        const auto& e = j["data"][0]["embedding"];
        if (!e.is_array()) throw Error(ErrorKind::ProviderProtocol, name_ + ": embedding is not an array");
        std::vector<double> v;
        v.reserve(e.size());
        for (const auto& x : e) {
            if (!x.is_number()) throw Error(ErrorKind::ProviderProtocol, name_ + ": non-numeric embedding entry");
            v.push_back(x.get<double>());
        }
        return v;
    };
    auto fetched = fetch("/v1/embeddings", wire, key, task, json::object(), [&](const std::string& b) { extract(b); });
    auto values = extract(fetched.body);
    {
        std::lock_guard lock(mutex_);
        const auto expected = config_.dim ? config_.dim : learned_dim_;
        if (expected && values.size() != *expected)
            throw Error(ErrorKind::ProviderProtocol, name_ + ": embedding has dim " + std::to_string(values.size()) +
                                                         ", expected " + std::to_string(*expected));
        if (!learned_dim_) learned_dim_ = values.size();
    }
    try {
        return EmbeddingVector(std::move(values), {name_, config_.model, fetched.key});
    } catch (const Error& e) {
        throw Error(ErrorKind::ProviderProtocol, name_ + ": " + e.what());
    }
}

EmbeddingVector ProviderClient::embed_text(const std::string& text) {
    return embed(text, text, "embed-text");
}

EmbeddingVector ProviderClient::embed_image(const ImageRef& image) {
    const auto payload = load_image(image);
    return embed(json::array({{{"image", payload.wire_url}}}), json::array({{{"image", "sha256:" + payload.digest}}}),
                 "embed-image");
}

std::string caption(ProviderClient& captioner, const ImageRef& image, const std::string& prompt) {
    require_kind(captioner, ProviderKind::Captioner);
    ChatRequest req;
    req.task = "caption";
    req.messages.push_back({"user", {{prompt, std::nullopt}, {"", load_image(image)}}});
    auto text = trim(captioner.chat(req));
    if (text.empty())
        throw Error(ErrorKind::ProviderProtocol, captioner.name() + ": empty caption for image '" + image.id + "'");
    return text;
}

EmbeddingVector embed_text(ProviderClient& embedder, const std::string& text) {
    require_kind(embedder, ProviderKind::Embedder);
    if (text.empty()) throw Error(ErrorKind::Validation, "embed_text: empty text");
    return embedder.embed_text(text);
}

EmbeddingVector embed_image(ProviderClient& embedder, const ImageRef& image) {
    require_kind(embedder, ProviderKind::Embedder);
    return embedder.embed_image(image);
}

std::optional<int> parse_yes_no(std::string_view reply) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : reply) {
        if (std::isalpha(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    if (words.empty()) return std::nullopt;
    if (words.front() == "yes") return 1;
    if (words.front() == "no") return 0;
    const bool yes = std::find(words.begin(), words.end(), "yes") != words.end();
    const bool no = std::find(words.begin(), words.end(), "no") != words.end();
    if (yes != no) return yes ? 1 : 0;
    return std::nullopt;
}

int judge(ProviderClient& judge_client, const JudgeSubject& subject, const std::string& description,
          const PromptSet& prompts) {
    require_kind(judge_client, ProviderKind::Judge);
    ChatRequest req;
    req.task = "judge";
    req.args = {{"description", description}};
    if (const auto* image = std::get_if<ImageRef>(&subject)) {
        const auto text = render_template(prompts.judge_image, {{"description", description}});
        req.messages.push_back({"user", {{text, std::nullopt}, {"", load_image(*image)}}});
    } else {
        const auto& caption_text = std::get<std::string>(subject);
        req.args["subject_text"] = caption_text;
        const auto text = render_template(prompts.judge_caption, {{"caption", caption_text}, {"description", description}});
        req.messages.push_back({"user", {{text, std::nullopt}}});
    }
    const std::string first = judge_client.chat(req);
    if (auto v = parse_yes_no(first)) return *v;

    req.messages.push_back({"assistant", {{first, std::nullopt}}});
    req.messages.push_back({"user", {{prompts.judge_clarify, std::nullopt}}});
    req.args["clarify"] = true;
    const std::string second = judge_client.chat(req);
    if (auto v = parse_yes_no(second)) return *v;
    throw JudgeParseError(judge_client.name() + ": judge reply is neither yes nor no: '" + second + "'", second);
}

}  // namespace urbansense::providers
