#pragma once

// Shared error types and tiny formatting helpers used across the toolkit.

#include <sstream>
#include <stdexcept>
#include <string>

namespace gf {

// Raised for malformed user-supplied input (corpora, configs, feature files,
// CLI arguments).  The CLI maps this to exit code 2; internal failures
// (plain std::runtime_error and friends) map to exit code 1.
struct input_error : std::runtime_error {
  explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string strcat_msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  throw std::runtime_error(strcat_msg(args...));
}

template <typename... Args>
[[noreturn]] void fail_input(const Args&... args) {
  throw input_error(strcat_msg(args...));
}

template <typename... Args>
void check(bool cond, const Args&... args) {
  if (!cond) fail(args...);
}

template <typename... Args>
void check_input(bool cond, const Args&... args) {
  if (!cond) fail_input(args...);
}

}  // namespace gf
