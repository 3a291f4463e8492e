#pragma once

#include <cstddef>

namespace nodpred {

/// x[i] = exp(x[i]) through the vectorized libm routines (within a few ulp of
/// std::exp). Inputs must be finite.
void exp_inplace(double* x, std::size_t n) noexcept;

}  // namespace nodpred
