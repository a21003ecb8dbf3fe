#pragma once

#include <cstdio>
#include <string>

namespace ganimc {

inline void warn(const std::string& msg) {
  std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

}  // namespace ganimc
