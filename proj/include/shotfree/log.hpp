#pragma once

#include <string>

namespace shotfree {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

/// Current level, resolved once from SHOTFREE_LOG (error|info|debug;
/// default info). set_log_level overrides it for the process.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_error(const std::string& msg);
void log_warn(const std::string& msg);  // printed at error level and above
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace shotfree
