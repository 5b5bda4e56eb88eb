#include "respbin/threads.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace respbin {

namespace {

int resolve_thread_count() {
    const char* env = std::getenv("RESPBIN_THREADS");
    if (env != nullptr) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
            // fall through to the OpenMP default
        }
    }
    return omp_get_max_threads();
}

} // namespace

int thread_count() {
    static const int n = resolve_thread_count();
    return n;
}

} // namespace respbin
