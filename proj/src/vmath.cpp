#include "nodpred/vmath.hpp"

#include <cmath>

// built with -ffast-math so the loop maps onto libmvec's vector exp
namespace nodpred {

void exp_inplace(double* x, std::size_t n) noexcept {
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i]);
}

}  // namespace nodpred
