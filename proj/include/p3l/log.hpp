#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace p3l {

// Warnings go to stderr unless P3L_QUIET is set.
inline void log_warning(std::string_view msg) {
  static const bool quiet = std::getenv("P3L_QUIET") != nullptr;
  if (!quiet) std::clog << "[p3l] warning: " << msg << '\n';
}

}  // namespace p3l
