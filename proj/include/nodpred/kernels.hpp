#pragma once

#include <span>
#include <vector>

#include "nodpred/matrix.hpp"

// Dense kernels behind the model. The top-level functions are OpenMP-parallel
// over independent output rows; `reference` holds the plain serial loops they
// are tested and benchmarked against. Both sum in the same order per output
// element, so results agree to rounding of fused multiply-adds.
namespace nodpred::kernels {

int max_threads() noexcept;

/// c = a * b (or c += a * b).
void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
/// c = a * b^T (or c += ...).
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
/// c = a^T * b (or c += ...).
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

/// Multi-head attention with per-head linear distance penalty (ALiBi) and an
/// optional causal mask. q is Tq x d, k and v are Tk x d with Tq <= Tk; the
/// queries are the last Tq positions of the key sequence, so query t sits at
/// position t + Tk - Tq and, when causal, sees keys up to that position. When `probs` is non-null it receives the
/// attention weights laid out heads x Tq x Tk (zero where masked).
struct AttentionSpec {
    std::size_t heads = 1;
    bool causal = true;
    std::span<const double> slopes;  // one per head
};

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec,
                       Matrix& out, std::vector<double>* probs);

/// Accumulates gradients of the attention output into dq, dk, dv.
void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec,
                        const std::vector<double>& probs, const Matrix& dout, Matrix& dq, Matrix& dk,
                        Matrix& dv);

namespace reference {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec,
                       Matrix& out, std::vector<double>* probs);
void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec,
                        const std::vector<double>& probs, const Matrix& dout, Matrix& dq, Matrix& dk,
                        Matrix& dv);

}  // namespace reference

}  // namespace nodpred::kernels
