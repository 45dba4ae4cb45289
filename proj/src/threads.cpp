#include "modconn/threads.hpp"

#include "modconn/common.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <omp.h>

namespace modconn {

int configure_threads() {
    const char* raw = std::getenv("MODCONN_THREADS");
    if (raw == nullptr || *raw == '\0') return worker_threads();
    int n = 0;
    const char* end = raw + std::strlen(raw);
    const auto res = std::from_chars(raw, end, n);
    if (res.ec != std::errc() || res.ptr != end || n < 1) {
        throw DataError(std::string("MODCONN_THREADS must be a positive integer, got '") + raw + "'");
    }
    omp_set_num_threads(n);
    return worker_threads();
}

int worker_threads() { return omp_get_max_threads(); }

}  // namespace modconn
