#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace dmmd {

enum class Domain { source, target };

inline const char* to_string(Domain d) {
  return d == Domain::source ? "source" : "target";
}

inline Domain domain_from_string(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw std::invalid_argument("unknown domain tag: '" + s + "'");
}

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

inline void check(bool ok, const std::string& message) {
  if (!ok) throw std::runtime_error(message);
}

// Shortest decimal string that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return std::string(buf);
}

}  // namespace detail
}  // namespace dmmd
