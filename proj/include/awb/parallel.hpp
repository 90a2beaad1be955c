#pragma once

#include <cstddef>
#include <functional>

namespace awb {

/// Upper bound on threads used by parallel_for (default 1).
void set_workers(std::size_t n);
std::size_t workers();

/// Runs fn(i) for i in [0, n) over contiguous static chunks. Each index is
/// visited exactly once, so results are independent of the worker count as
/// long as fn(i) writes only to slots owned by i. The first exception thrown
/// by any chunk is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace awb
