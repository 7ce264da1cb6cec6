#pragma once

// Node loops are parallelised with OpenMP when available. Each iteration
// writes only its own output slot and sums in a fixed order, so results do
// not depend on the thread count.
#if defined(_OPENMP)
#define CHIPLET_PARALLEL_FOR _Pragma("omp parallel for schedule(static)")
#else
#define CHIPLET_PARALLEL_FOR
#endif

namespace chiplet {

// Applies the MEANFIELD_THREADS cap (if set) and returns the thread count in use.
int configure_threads();
// Explicit override, e.g. single-threaded timing runs.
void set_threads(int n);

}  // namespace chiplet
