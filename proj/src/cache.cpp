#include "urbansense/cache.hpp"

#include <chrono>

#include "urbansense/error.hpp"
#include "urbansense/io.hpp"

namespace urbansense::providers {

namespace fs = std::filesystem;

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create cache directory " + dir_.string() + ": " + ec.message());
}

std::optional<std::string> ResponseCache::get(const std::string& key) {
    const auto path = dir_ / (key + ".body");
    std::error_code ec;
    if (!fs::exists(path, ec)) {
        ++misses_;
        return std::nullopt;
    }
    ++hits_;
    return io::read_file(path);
}

void ResponseCache::put(const std::string& key, const std::string& value, const nlohmann::json& meta) {
    const auto body = dir_ / (key + ".body");
    std::error_code ec;
    if (fs::exists(body, ec)) return;
    io::write_file_atomic(body, value);
    nlohmann::json sidecar = meta;
    sidecar["key"] = key;
    sidecar["size"] = value.size();
    sidecar["created_at"] = std::chrono::duration_cast<std::chrono::seconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count();
    io::write_file_atomic(dir_ / (key + ".json"), sidecar.dump(2) + "\n");
}

}  // namespace urbansense::providers
