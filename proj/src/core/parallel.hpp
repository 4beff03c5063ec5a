#pragma once

#include <cstddef>
#include <functional>

namespace vsod {

// Process-wide worker count (1 = fully serial). parallel_for hands each
// worker a contiguous, disjoint index range, so numeric results do not
// depend on the worker count.
void set_thread_count(int n);
int thread_count();

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t begin, std::size_t end)>& chunk_fn);

} // namespace vsod
