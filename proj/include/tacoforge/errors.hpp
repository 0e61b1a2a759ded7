#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace tacoforge {

// Bad inputs: malformed files, unknown config keys, invalid CLI usage.
// The CLI maps this to exit code 2.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// A check that was expected to hold failed (non-finite loss, gradcheck
// above tolerance). The CLI maps this to exit code 1.
class VerifyError : public std::runtime_error {
 public:
  explicit VerifyError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string strcat_msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

#define TACO_CHECK(cond, ...)                                         \
  do {                                                                \
    if (!(cond)) throw std::invalid_argument(strcat_msg(__VA_ARGS__)); \
  } while (0)

#define TACO_INPUT_CHECK(cond, ...)                      \
  do {                                                   \
    if (!(cond)) throw UsageError(strcat_msg(__VA_ARGS__)); \
  } while (0)

}  // namespace tacoforge
