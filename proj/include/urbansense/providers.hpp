#pragma once

#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbansense/cache.hpp"
#include "urbansense/embedding.hpp"
#include "urbansense/prompts.hpp"
#include "urbansense/transport.hpp"

namespace urbansense::providers {

enum class ProviderKind { Captioner, Embedder, Judge };

const char* to_string(ProviderKind kind) noexcept;
ProviderKind provider_kind_from_string(std::string_view s);

struct RetryPolicy {
    int max_attempts = 3;
    double base_backoff_s = 0.5;  // doubled after each failed attempt
};

struct ProviderConfig {
    ProviderKind kind = ProviderKind::Captioner;
    std::string endpoint;     // "https://host[:port]" (paths /v1/... are appended) or "mock://"
    std::string model;
    std::string api_key_env;  // empty: no Authorization header
    double timeout_s = 60.0;
    int max_parallel = 4;
    RetryPolicy retry;
    std::optional<std::size_t> dim;  // embedder only: declared vector size
    double temperature = 0.0;

    /// Throws Validation for timeout <= 0, max_parallel < 1, empty endpoint/model, bad retry.
    void validate() const;
    bool is_mock() const { return endpoint.rfind("mock://", 0) == 0; }
};

/// An image as the providers see it: a local file (sent inline as a data URL) or a remote URL.
struct ImageRef {
    std::string id;
    std::string path;
};

struct ImagePayload {
    std::string wire_url;  // data:...;base64,... or the remote URL
    std::string digest;    // sha256 of the bytes (or of the URL for remote images)
};

/// Reads the image. Throws Io when a local file cannot be read.
ImagePayload load_image(const ImageRef& image);

/// Digest used for cache keys and by the mock backend's content registry.
std::string image_digest(const ImageRef& image);

struct ContentPart {
    std::string text;                    // used when image is empty
    std::optional<ImagePayload> image;
};

struct ChatMessage {
    std::string role;
    std::vector<ContentPart> parts;
};

struct ChatRequest {
    std::string task;             // "caption", "judge", "propose-captions", ...
    std::vector<ChatMessage> messages;
    std::optional<std::int64_t> seed;
    /// Structured copy of the prompt's inputs, sent as the X-Urbansense-Args header. Real
    /// servers ignore it; the mock backend answers from it instead of parsing prose.
    nlohmann::json args = nlohmann::json::object();
};

struct ClientStats {
    std::size_t requests = 0;
    std::size_t cache_hits = 0;
    std::size_t network_calls = 0;  // transport posts, retries included
    std::size_t failed_attempts = 0;
};

/// OpenAI-compatible client for one configured provider. Thread-safe. Identical requests
/// (same canonical payload digest) share one network call: results are cached on disk when
/// a cache is attached, and concurrent duplicates wait on the first caller.
class ProviderClient {
public:
    using SleepFn = std::function<void(double seconds)>;

    ProviderClient(ProviderConfig config, std::shared_ptr<Transport> transport,
                   std::shared_ptr<ResponseCache> cache = nullptr, SleepFn sleep = {});

    const ProviderConfig& config() const noexcept { return config_; }
    const std::string& name() const noexcept { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

    /// POST /v1/chat/completions; returns the first choice's message content.
    std::string chat(const ChatRequest& request);

    /// POST /v1/embeddings with a single text input.
    EmbeddingVector embed_text(const std::string& text);
    /// POST /v1/embeddings with input [{"image": url}].
    EmbeddingVector embed_image(const ImageRef& image);

    ClientStats stats() const;

private:
    struct Fetched {
        std::string body;
        std::string key;
    };
    Fetched fetch(const std::string& path, const nlohmann::json& wire, const nlohmann::json& key_payload,
                  const std::string& task, const nlohmann::json& args,
                  const std::function<void(const std::string&)>& validate);
    std::string fetch_uncached(const std::string& path, const std::string& body, const std::string& task,
                               const nlohmann::json& args);
    EmbeddingVector embed(const nlohmann::json& input_wire, const nlohmann::json& input_key, const std::string& task);

    ProviderConfig config_;
    std::string name_;
    std::shared_ptr<Transport> transport_;
    std::shared_ptr<ResponseCache> cache_;
    SleepFn sleep_;
    std::counting_semaphore<1024> slots_;

    mutable std::mutex mutex_;
    std::map<std::string, std::shared_future<std::string>> inflight_;
    ClientStats stats_;
    std::optional<std::size_t> learned_dim_;
};

// Role operations. Each checks the client's configured kind.

/// Caption one image. Throws ProviderProtocol on an empty reply.
std::string caption(ProviderClient& captioner, const ImageRef& image, const std::string& prompt);

EmbeddingVector embed_text(ProviderClient& embedder, const std::string& text);
EmbeddingVector embed_image(ProviderClient& embedder, const ImageRef& image);

/// yes -> 1, no -> 0; nullopt when the reply is neither. The first alphabetic word decides;
/// otherwise a reply containing exactly one of the words "yes"/"no" is accepted.
std::optional<int> parse_yes_no(std::string_view reply);

using JudgeSubject = std::variant<ImageRef, std::string>;  // image, or a caption text

/// Binary match judgement. An unparsable reply triggers one clarifying re-prompt; a second
/// unparsable reply throws JudgeParseError carrying the raw text.
int judge(ProviderClient& judge_client, const JudgeSubject& subject, const std::string& description,
          const PromptSet& prompts);

}  // namespace urbansense::providers
