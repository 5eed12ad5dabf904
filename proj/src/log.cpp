#include "telecg/log.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <mutex>

#include "telecg/errors.hpp"

namespace telecg::log {

namespace {
std::atomic<Level> g_level{Level::Info};
std::mutex g_mu;

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

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

Level parse_level(std::string_view text) {
  if (text == "debug") return Level::Debug;
  if (text == "info") return Level::Info;
  if (text == "warn" || text == "warning") return Level::Warn;
  if (text == "error") return Level::Error;
  throw ValidationError("unknown log level '" + std::string(text) + "'");
}

void write(Level lvl, std::string_view message) {
  if (lvl < g_level.load()) return;
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", &tm);
  std::lock_guard lock(g_mu);
  std::fprintf(stderr, "%s [%s] %.*s\n", stamp, tag(lvl), static_cast<int>(message.size()), message.data());
}

}  // namespace telecg::log
