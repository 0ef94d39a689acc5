#pragma once

#include <cstddef>
#include <functional>

namespace twoscale {

// Worker count used when a caller passes 0: TS_WORKERS if set, otherwise the
// hardware concurrency.
int default_workers();
void set_default_workers(int workers);

// Splits [0, n) into contiguous chunks and runs body(begin, end) on up to
// `workers` threads. The first exception thrown by any chunk is rethrown.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body,
                  int workers = 0);

}  // namespace twoscale
