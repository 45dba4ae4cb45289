#pragma once

namespace modconn {

/// Applies MODCONN_THREADS (a positive integer) as the OpenMP thread cap and
/// returns the resulting worker count. Unset means all available cores.
/// Throws DataError when the variable is set but not a positive integer.
int configure_threads();

/// Worker count OpenMP will use for the next parallel region.
[[nodiscard]] int worker_threads();

}  // namespace modconn
