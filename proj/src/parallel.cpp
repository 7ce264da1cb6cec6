#include "chiplet/parallel.hpp"

#include <cstdlib>
#include <string>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace chiplet {

int configure_threads() {
#if defined(_OPENMP)
    if (const char* env = std::getenv("MEANFIELD_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) omp_set_num_threads(n);
        } catch (const std::exception&) {
            // unparsable value: keep the OpenMP default
        }
    }
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#if defined(_OPENMP)
    if (n >= 1) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

}  // namespace chiplet
