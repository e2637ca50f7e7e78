#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace conefield {

/// Round-trippable decimal form with 17 significant digits.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Comma-joined line of numbers, newline-terminated.
inline void csv_line(std::ostream& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ',';
    out << fmt17(values[i]);
  }
  out << '\n';
}

inline void csv_header(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out << ',';
    out << names[i];
  }
  out << '\n';
}

}  // namespace conefield
