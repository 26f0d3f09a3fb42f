#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace dnet {

// Shortest round-trip decimal form of a double; deterministic across runs,
// used everywhere a float lands in a file or on stdout.
inline std::string double_str(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

}  // namespace dnet
