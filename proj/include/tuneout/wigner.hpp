#pragma once

#include "tuneout/half_int.hpp"

namespace tuneout {

// Wigner 3j and 6j symbols. Selection-rule violations return 0.
//
// Evaluation goes through an exact prime-factorised Racah sum: every term is
// a signed product of prime powers, the common factor is pulled out and the
// remaining integers are summed in 128-bit arithmetic. Only the final square
// root and prime-power product are rounded. If the integer sum would
// overflow, a long-double log-factorial Racah sum is used instead.
double wigner_3j(HalfInt j1, HalfInt j2, HalfInt j3, HalfInt m1, HalfInt m2, HalfInt m3);
double wigner_6j(HalfInt j1, HalfInt j2, HalfInt j3, HalfInt j4, HalfInt j5, HalfInt j6);

// Same values before the final rounding to double.
long double wigner_3j_ext(HalfInt j1, HalfInt j2, HalfInt j3, HalfInt m1, HalfInt m2, HalfInt m3);
long double wigner_6j_ext(HalfInt j1, HalfInt j2, HalfInt j3, HalfInt j4, HalfInt j5, HalfInt j6);

// Number of evaluations that needed the floating fallback (diagnostics).
long wigner_fallback_count();

}  // namespace tuneout
