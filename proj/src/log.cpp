#include "chemtown/log.hpp"

#include <iostream>
#include <mutex>

namespace chemtown::log {

namespace {

std::mutex mutex;
Sink sink;
bool verbose = false;

void default_sink(Level level, std::string_view message) {
    std::cerr << "[" << level_name(level) << "] " << message << "\n";
}

} // namespace

void set_sink(Sink new_sink) {
    std::lock_guard lock(mutex);
    sink = std::move(new_sink);
}

void set_verbose(bool on) {
    std::lock_guard lock(mutex);
    verbose = on;
}

void write(Level level, std::string_view message) {
    std::lock_guard lock(mutex);
    if (!verbose && (level == Level::debug || level == Level::info)) return;
    if (sink)
        sink(level, message);
    else
        default_sink(level, message);
}

std::string_view level_name(Level level) {
    switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    }
    return "unknown";
}

} // namespace chemtown::log
