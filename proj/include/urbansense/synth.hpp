#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace urbansense::app {

/// Two cities by two periods. Every caption names its city's and its period's tokens plus a
/// random non-empty subset of three tokens unique to its category; the mock embedder plants
/// all of them on their own axes, so descriptions that name them separate the groups.
struct SynthOptions {
    std::size_t per_category = 40;
    std::uint64_t seed = 7;
    int image_size = 8;  // pixels per side of the generated PPM images
};

struct SynthFixture {
    std::filesystem::path dir;
    std::filesystem::path manifest;
    std::filesystem::path config;
    std::filesystem::path phrase_bank;
    std::vector<std::string> pairs;
    std::vector<std::string> planted;
};

SynthFixture write_synthetic_fixture(const std::filesystem::path& dir, const SynthOptions& options = {});

}  // namespace urbansense::app
