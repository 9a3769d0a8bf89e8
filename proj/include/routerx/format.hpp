#pragma once

#include <cstdio>
#include <string>

namespace routerx {

/// Fixed "%.<digits>g" rendering; locale-independent for the C locale the
/// tools run under, byte-stable across runs.
inline std::string format_number(double value, int digits = 10) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, value);
  return buf;
}

}  // namespace routerx
