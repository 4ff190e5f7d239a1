#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gsem {

// Number of workers used when a caller passes 0.
inline int default_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline int resolve_threads(int requested) { return requested > 0 ? requested : default_threads(); }

}  // namespace gsem
