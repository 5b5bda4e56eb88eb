#pragma once

namespace respbin {

/// Execution policy for the OpenMP kernels. Every kernel has a serial
/// reference path producing bit-identical results; tests compare the two.
enum class Exec { serial, parallel };

/// Worker count for parallel kernels: RESPBIN_THREADS when set to a positive
/// integer, otherwise the OpenMP default. Read once per process.
int thread_count();

} // namespace respbin
