#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbansense/transport.hpp"

namespace urbansense::providers {

struct MockOptions {
    std::uint64_t seed = 0;
    std::size_t dim = 64;
    /// token -> basis index. Texts containing a planted token are pulled toward that axis.
    std::map<std::string, std::size_t> planted;
    double planted_weight = 0.8;
};

/// Deterministic stand-in for an OpenAI-compatible server, used as a Transport.
///
/// Embeddings: unit-normalised blend of a hash expansion of the token multiset (weight
/// 1 - planted_weight) and the planted basis directions of any planted tokens present
/// (weight planted_weight). Images are "seen" through registered content text keyed by
/// image digest; unknown images embed their digest.
///
/// Chat tasks (X-Urbansense-Task header): caption returns the image's content text; judge
/// answers yes iff subject and description share a non-stopword token; propose-captions
/// lists the K most over-represented tokens per side; propose-embedding echoes the nearest
/// phrases; propose-grid returns placeholder impressions.
class MockBackend : public Transport {
public:
    explicit MockBackend(MockOptions options = {});

    HttpResponse post(const HttpRequest& request) override;

    void register_image_content(const std::string& digest, std::string content);

    std::vector<double> embed_raw(std::string_view text) const;
    const MockOptions& options() const noexcept { return options_; }

private:
    std::string content_for(const std::string& image_url) const;
    std::string chat_reply(const std::string& task, const nlohmann::json& args,
                           const std::vector<std::string>& image_urls) const;

    MockOptions options_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> content_;
};

}  // namespace urbansense::providers
