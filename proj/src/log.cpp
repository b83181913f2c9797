#include "shotfree/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace shotfree {

namespace {

LogLevel g_level = LogLevel::kInfo;
std::once_flag g_env_once;
std::mutex g_mutex;

void init_from_env() {
  const char* env = std::getenv("SHOTFREE_LOG");
  if (!env) return;
  if (std::strcmp(env, "error") == 0) g_level = LogLevel::kError;
  else if (std::strcmp(env, "info") == 0) g_level = LogLevel::kInfo;
  else if (std::strcmp(env, "debug") == 0) g_level = LogLevel::kDebug;
  // anything else: keep the default rather than failing a whole run
}

void emit(const char* tag, const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_mutex);
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace

LogLevel log_level() {
  std::call_once(g_env_once, init_from_env);
  return g_level;
}

void set_log_level(LogLevel level) {
  std::call_once(g_env_once, init_from_env);
  g_level = level;
}

void log_error(const std::string& msg) { emit("error", msg); }

void log_warn(const std::string& msg) { emit("warn", msg); }

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) emit("info", msg);
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) emit("debug", msg);
}

}  // namespace shotfree
