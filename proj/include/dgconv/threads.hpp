// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <thread>

namespace dgconv {

/// Worker count for batch-parallel loops. DGCONV_THREADS overrides the
/// hardware default. Work is partitioned by output index so results do not
/// depend on the thread count.
inline int thread_count() {
  static int n = [] {
    if (const char* e = std::getenv("DGCONV_THREADS")) {
      int v = std::atoi(e);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return n;
}

}  // namespace dgconv
