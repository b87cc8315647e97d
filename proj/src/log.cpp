#include "urbansense/log.hpp"

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <mutex>

namespace urbansense::log {

namespace {

Level level_from_env() {
    const char* v = std::getenv("URBANSENSE_LOG");
    if (!v) return Level::Warn;
    if (std::strcmp(v, "debug") == 0) return Level::Debug;
    if (std::strcmp(v, "info") == 0) return Level::Info;
    if (std::strcmp(v, "error") == 0) return Level::Error;
    return Level::Warn;
}

struct State {
    std::mutex mutex;
    Level min_level = level_from_env();
    std::function<void(Level, const std::string&)> sink;
};

State& state() {
    static State s;
    return s;
}

const char* tag(Level l) {
    switch (l) {
        case Level::Debug: return "debug";
        case Level::Info: return "info";
        case Level::Warn: return "warn";
        case Level::Error: return "error";
    }
    return "?";
}

}  // namespace

void write(Level level, const std::string& message) {
    auto& s = state();
    std::lock_guard lock(s.mutex);
    if (s.sink) {
        s.sink(level, message);
        return;
    }
    if (level < s.min_level) return;
    std::cerr << "[" << tag(level) << "] " << message << '\n';
}

void set_sink(std::function<void(Level, const std::string&)> sink) {
    auto& s = state();
    std::lock_guard lock(s.mutex);
    s.sink = std::move(sink);
}

void set_level(Level level) {
    auto& s = state();
    std::lock_guard lock(s.mutex);
    s.min_level = level;
}

}  // namespace urbansense::log
