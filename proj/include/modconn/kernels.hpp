#pragma once

// Per-class execution helpers.
//
// Every multi-class quantity in the library is a sum of independent per-class
// terms. The terms are written into per-class slots (possibly in parallel) and
// reduced afterwards in class order, so the serial and OpenMP paths produce
// bit-identical results.

#include <cstddef>
#include <exception>
#include <numeric>
#include <vector>

namespace modconn {

enum class Exec {
    serial,    ///< reference path, plain loop
    parallel,  ///< OpenMP loop over classes
};

template <class Fn>
void for_each_class(std::size_t count, Exec exec, Fn&& fn) {
    const auto n = static_cast<long>(count);
    if (exec == Exec::parallel && n > 1) {
        // Exceptions must not escape an OpenMP region; the lowest failing
        // class index wins so the rethrown error does not depend on scheduling.
        std::vector<std::exception_ptr> errors(count);
#pragma omp parallel for schedule(static)
        for (long i = 0; i < n; ++i) {
            try {
                fn(static_cast<std::size_t>(i));
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (long i = 0; i < n; ++i) fn(static_cast<std::size_t>(i));
    }
}

/// Evaluates fn(i) for every class and returns the per-class results.
template <class T, class Fn>
std::vector<T> map_classes(std::size_t count, Exec exec, Fn&& fn) {
    std::vector<T> out(count);
    for_each_class(count, exec, [&](std::size_t i) { out[i] = fn(i); });
    return out;
}

/// Ordered sum; never a parallel reduction.
inline double ordered_sum(const std::vector<double>& terms) {
    return std::accumulate(terms.begin(), terms.end(), 0.0);
}

inline double ordered_mean(const std::vector<double>& terms) {
    return terms.empty() ? 0.0 : ordered_sum(terms) / static_cast<double>(terms.size());
}

}  // namespace modconn
