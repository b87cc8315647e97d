#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace urbansense::providers {

/// Content-addressed response cache. Each entry is `<key>.body` (raw response bytes) plus a
/// `<key>.json` sidecar (kind, model, created_at, size). Entries are written once via
/// temp-file-and-rename and never modified, so concurrent writers are safe.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<std::string> get(const std::string& key);
    void put(const std::string& key, const std::string& value, const nlohmann::json& meta);

    const std::filesystem::path& dir() const noexcept { return dir_; }
    std::size_t hits() const noexcept { return hits_.load(); }
    std::size_t misses() const noexcept { return misses_.load(); }

private:
    std::filesystem::path dir_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

}  // namespace urbansense::providers
