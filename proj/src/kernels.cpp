#include "nodpred/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "nodpred/error.hpp"
#include "nodpred/vmath.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nodpred::kernels {

namespace {

void check_product(std::size_t lhs_inner, std::size_t rhs_inner, std::size_t rows,
                   std::size_t cols, const Matrix& c, bool accumulate, const char* what) {
    if (lhs_inner != rhs_inner) {
        fail(ErrorKind::Shape, std::string(what) + ": inner dimensions " +
                                   std::to_string(lhs_inner) + " and " + std::to_string(rhs_inner) +
                                   " differ");
    }
    if (accumulate && (c.rows() != rows || c.cols() != cols)) {
        fail(ErrorKind::Shape, std::string(what) + ": accumulator has wrong shape");
    }
}

void prepare(Matrix& c, std::size_t rows, std::size_t cols, bool accumulate) {
    if (!accumulate) {
        if (c.rows() != rows || c.cols() != cols) {
            c = Matrix(rows, cols);
        } else {
            c.fill(0.0);
        }
    }
}

void check_attention(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec) {
    if (spec.heads == 0 || q.cols() % spec.heads != 0) {
        fail(ErrorKind::Shape, "attention width must divide evenly into heads");
    }
    if (k.cols() != q.cols() || v.cols() != q.cols() || k.rows() != v.rows()) {
        fail(ErrorKind::Shape, "attention q/k/v shapes disagree");
    }
    if (q.rows() > k.rows()) {
        fail(ErrorKind::Shape, "attention needs at least as many keys as queries");
    }
    if (spec.slopes.size() != spec.heads) {
        fail(ErrorKind::Shape, "attention needs one slope per head");
    }
}

// Column-major copy; head h occupies rows [h * dh, (h + 1) * dh) of the
// result, so dot products against every key run along contiguous memory.
std::vector<double> transpose_columns(const Matrix& m) {
    const std::size_t rows = m.rows();
    const std::size_t d = m.cols();
    std::vector<double> out(d * rows);
    for (std::size_t s = 0; s < rows; ++s) {
        const double* src = m.data() + s * d;
        for (std::size_t c = 0; c < d; ++c) out[c * rows + s] = src[c];
    }
    return out;
}

// Softmaxed scores for query t (absolute position pos) of head h over keys [0, limit).
inline void score_row(const double* qt, const double* kt, std::size_t tk, std::size_t dh, double scale,
                      double slope, std::size_t pos, std::size_t limit, double* row) {
    for (std::size_t s = 0; s < limit; ++s) row[s] = 0.0;
    for (std::size_t j = 0; j < dh; ++j) {
        const double qj = qt[j];
        const double* kj = kt + j * tk;
        for (std::size_t s = 0; s < limit; ++s) row[s] += qj * kj[s];
    }
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < limit; ++s) {
        const double dist = pos >= s ? static_cast<double>(pos - s) : static_cast<double>(s - pos);
        row[s] = scale * row[s] - slope * dist;
        peak = std::max(peak, row[s]);
    }
    for (std::size_t s = 0; s < limit; ++s) row[s] -= peak;
    exp_inplace(row, limit);
    double total = 0.0;
    for (std::size_t s = 0; s < limit; ++s) total += row[s];
    for (std::size_t s = 0; s < limit; ++s) row[s] /= total;
}

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 8;

using vec4 = double __attribute__((vector_size(32)));

inline vec4 load4(const double* p) {
    vec4 v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store4(double* p, vec4 v) { std::memcpy(p, &v, sizeof v); }

// c[R x 8] += a[R x inner] * b[inner x 8], summing p in ascending order.
template <std::size_t R>
inline void tile_kernel(const double* ap, std::size_t lda, const double* bp, std::size_t ldb, double* cp,
                        std::size_t ldc, std::size_t inner) {
    vec4 lo[R];
    vec4 hi[R];
    for (std::size_t r = 0; r < R; ++r) {
        lo[r] = load4(cp + r * ldc);
        hi[r] = load4(cp + r * ldc + 4);
    }
    for (std::size_t p = 0; p < inner; ++p) {
        const vec4 b0 = load4(bp + p * ldb);
        const vec4 b1 = load4(bp + p * ldb + 4);
        for (std::size_t r = 0; r < R; ++r) {
            const double arp = ap[r * lda + p];
            lo[r] += arp * b0;
            hi[r] += arp * b1;
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        store4(cp + r * ldc, lo[r]);
        store4(cp + r * ldc + 4, hi[r]);
    }
}

// Leftover columns, one at a time, same summation order.
template <std::size_t R>
inline void column_kernel(const double* ap, std::size_t lda, const double* bp, std::size_t ldb, double* cp,
                          std::size_t ldc, std::size_t inner) {
    double acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = cp[r * ldc];
    for (std::size_t p = 0; p < inner; ++p) {
        for (std::size_t r = 0; r < R; ++r) acc[r] += ap[r * lda + p] * bp[p * ldb];
    }
    for (std::size_t r = 0; r < R; ++r) cp[r * ldc] = acc[r];
}

// Rows [i0, i0 + rows) of c += a * b for rows <= kRowBlock.
template <std::size_t R>
void row_block(const double* ap, const double* bp, double* cp, std::size_t inner, std::size_t n) {
    std::size_t j0 = 0;
    for (; j0 + kColBlock <= n; j0 += kColBlock) {
        tile_kernel<R>(ap, inner, bp + j0, n, cp + j0, n, inner);
    }
    for (; j0 < n; ++j0) column_kernel<R>(ap, inner, bp + j0, n, cp + j0, n, inner);
}

void blocked_product(const double* ap, const double* bp, double* cp, std::size_t m, std::size_t inner,
                     std::size_t n) {
    const auto blocks = static_cast<long long>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static) if (m * inner * n > 32768)
    for (long long blk = 0; blk < blocks; ++blk) {
        const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
        const std::size_t rows = std::min(kRowBlock, m - i0);
        const double* a = ap + i0 * inner;
        double* c = cp + i0 * n;
        switch (rows) {
            case 4: row_block<4>(a, bp, c, inner, n); break;
            case 3: row_block<3>(a, bp, c, inner, n); break;
            case 2: row_block<2>(a, bp, c, inner, n); break;
            default: row_block<1>(a, bp, c, inner, n); break;
        }
    }
}

Matrix transposed(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    }
    return t;
}

}  // namespace

int max_threads() noexcept {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_product(a.cols(), b.rows(), a.rows(), b.cols(), c, accumulate, "matmul");
    prepare(c, a.rows(), b.cols(), accumulate);
    blocked_product(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_product(a.cols(), b.cols(), a.rows(), b.rows(), c, accumulate, "matmul_nt");
    prepare(c, a.rows(), b.rows(), accumulate);
    const Matrix bt = transposed(b);
    blocked_product(a.data(), bt.data(), c.data(), a.rows(), a.cols(), bt.cols());
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_product(a.rows(), b.rows(), a.cols(), b.cols(), c, accumulate, "matmul_tn");
    prepare(c, a.cols(), b.cols(), accumulate);
    const Matrix at = transposed(a);
    blocked_product(at.data(), b.data(), c.data(), at.rows(), at.cols(), b.cols());
}

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec,
                       Matrix& out, std::vector<double>* probs) {
    check_attention(q, k, v, spec);
    const std::size_t tq = q.rows();
    const std::size_t tk = k.rows();
    const std::size_t offset = tk - tq;
    const std::size_t d = q.cols();
    const std::size_t dh = d / spec.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::vector<double> kt = transpose_columns(k);
    out = Matrix(tq, d);
    if (probs != nullptr) probs->assign(spec.heads * tq * tk, 0.0);
    const auto rows = static_cast<long long>(spec.heads * tq);
#pragma omp parallel if (rows * static_cast<long long>(tk) > 4096)
    {
        std::vector<double> scratch(tk);
#pragma omp for schedule(static)
        for (long long idx = 0; idx < rows; ++idx) {
            const std::size_t h = static_cast<std::size_t>(idx) / tq;
            const std::size_t t = static_cast<std::size_t>(idx) % tq;
            const std::size_t pos = t + offset;
            const std::size_t limit = spec.causal ? pos + 1 : tk;
            double* row = probs != nullptr ? probs->data() + (h * tq + t) * tk : scratch.data();
            score_row(q.data() + t * d + h * dh, kt.data() + h * dh * tk, tk, dh, scale, spec.slopes[h], pos, limit,
                      row);
            double* ot = out.data() + t * d + h * dh;
            for (std::size_t s = 0; s < limit; ++s) {
                const double w = row[s];
                const double* vs = v.data() + s * d + h * dh;
                for (std::size_t j = 0; j < dh; ++j) ot[j] += w * vs[j];
            }
        }
    }
}

void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec,
                        const std::vector<double>& probs, const Matrix& dout, Matrix& dq, Matrix& dk,
                        Matrix& dv) {
    check_attention(q, k, v, spec);
    const std::size_t tq = q.rows();
    const std::size_t tk = k.rows();
    const std::size_t offset = tk - tq;
    const std::size_t d = q.cols();
    const std::size_t dh = d / spec.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (probs.size() != spec.heads * tq * tk) {
        fail(ErrorKind::Shape, "attention_backward: stored weights do not match shapes");
    }
    const std::vector<double> vt = transpose_columns(v);
    // dS = P * (dP - rowsum(P * dP)), dP = dO V^T
    std::vector<double> dscore(spec.heads * tq * tk, 0.0);
    const auto rows = static_cast<long long>(spec.heads * tq);
#pragma omp parallel for schedule(static) if (rows * static_cast<long long>(tk) > 4096)
    for (long long idx = 0; idx < rows; ++idx) {
        const std::size_t h = static_cast<std::size_t>(idx) / tq;
        const std::size_t t = static_cast<std::size_t>(idx) % tq;
        const std::size_t limit = spec.causal ? t + offset + 1 : tk;
        const double* p = probs.data() + (h * tq + t) * tk;
        double* ds = dscore.data() + (h * tq + t) * tk;
        const double* dot_row = dout.data() + t * d + h * dh;
        const double* vh = vt.data() + h * dh * tk;
        for (std::size_t j = 0; j < dh; ++j) {
            const double gj = dot_row[j];
            const double* vj = vh + j * tk;
            for (std::size_t s = 0; s < limit; ++s) ds[s] += gj * vj[s];
        }
        double weighted = 0.0;
        for (std::size_t s = 0; s < limit; ++s) weighted += p[s] * ds[s];
        for (std::size_t s = 0; s < limit; ++s) ds[s] = p[s] * (ds[s] - weighted);
        double* dqt = dq.data() + t * d + h * dh;
        for (std::size_t s = 0; s < limit; ++s) {
            const double g = ds[s] * scale;
            const double* ks = k.data() + s * d + h * dh;
            for (std::size_t j = 0; j < dh; ++j) dqt[j] += g * ks[j];
        }
    }
    const auto key_rows = static_cast<long long>(spec.heads * tk);
#pragma omp parallel for schedule(static) if (key_rows * static_cast<long long>(tq) > 4096)
    for (long long idx = 0; idx < key_rows; ++idx) {
        const std::size_t h = static_cast<std::size_t>(idx) / tk;
        const std::size_t s = static_cast<std::size_t>(idx) % tk;
        const std::size_t first = spec.causal && s > offset ? s - offset : 0;
        double* dks = dk.data() + s * d + h * dh;
        double* dvs = dv.data() + s * d + h * dh;
        for (std::size_t t = first; t < tq; ++t) {
            const double p = probs[(h * tq + t) * tk + s];
            const double g = dscore[(h * tq + t) * tk + s] * scale;
            const double* qt = q.data() + t * d + h * dh;
            const double* dot_row = dout.data() + t * d + h * dh;
            for (std::size_t j = 0; j < dh; ++j) {
                dks[j] += g * qt[j];
                dvs[j] += p * dot_row[j];
            }
        }
    }
}

namespace reference {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_product(a.cols(), b.rows(), a.rows(), b.cols(), c, accumulate, "matmul");
    prepare(c, a.rows(), b.cols(), accumulate);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = c(i, j);
            for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
            c(i, j) = acc;
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_product(a.cols(), b.cols(), a.rows(), b.rows(), c, accumulate, "matmul_nt");
    prepare(c, a.rows(), b.rows(), accumulate);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double acc = c(i, j);
            for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
            c(i, j) = acc;
        }
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    check_product(a.rows(), b.rows(), a.cols(), b.cols(), c, accumulate, "matmul_tn");
    prepare(c, a.cols(), b.cols(), accumulate);
    for (std::size_t i = 0; i < a.cols(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = c(i, j);
            for (std::size_t p = 0; p < a.rows(); ++p) acc += a(p, i) * b(p, j);
            c(i, j) = acc;
        }
    }
}

void attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec,
                       Matrix& out, std::vector<double>* probs) {
    check_attention(q, k, v, spec);
    const std::size_t tq = q.rows();
    const std::size_t tk = k.rows();
    const std::size_t dh = q.cols() / spec.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t offset = tk - tq;
    out = Matrix(tq, q.cols());
    if (probs != nullptr) probs->assign(spec.heads * tq * tk, 0.0);
    std::vector<double> w(tk);
    for (std::size_t h = 0; h < spec.heads; ++h) {
        for (std::size_t t = 0; t < tq; ++t) {
            const double pos = static_cast<double>(t + offset);
            double peak = -std::numeric_limits<double>::infinity();
            for (std::size_t s = 0; s < tk; ++s) {
                if (spec.causal && s > t + offset) {
                    w[s] = -std::numeric_limits<double>::infinity();
                    continue;
                }
                double dot = 0.0;
                for (std::size_t j = 0; j < dh; ++j) dot += q(t, h * dh + j) * k(s, h * dh + j);
                w[s] = scale * dot - spec.slopes[h] * std::abs(pos - static_cast<double>(s));
                peak = std::max(peak, w[s]);
            }
            double total = 0.0;
            for (std::size_t s = 0; s < tk; ++s) {
                w[s] = std::exp(w[s] - peak);
                total += w[s];
            }
            for (std::size_t s = 0; s < tk; ++s) {
                w[s] /= total;
                if (probs != nullptr) (*probs)[(h * tq + t) * tk + s] = w[s];
                for (std::size_t j = 0; j < dh; ++j) out(t, h * dh + j) += w[s] * v(s, h * dh + j);
            }
        }
    }
}

void attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, const AttentionSpec& spec,
                        const std::vector<double>& probs, const Matrix& dout, Matrix& dq, Matrix& dk,
                        Matrix& dv) {
    check_attention(q, k, v, spec);
    const std::size_t tq = q.rows();
    const std::size_t tk = k.rows();
    const std::size_t dh = q.cols() / spec.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dp(tk);
    for (std::size_t h = 0; h < spec.heads; ++h) {
        for (std::size_t t = 0; t < tq; ++t) {
            const double* p = probs.data() + (h * tq + t) * tk;
            double weighted = 0.0;
            for (std::size_t s = 0; s < tk; ++s) {
                dp[s] = 0.0;
                for (std::size_t j = 0; j < dh; ++j) dp[s] += dout(t, h * dh + j) * v(s, h * dh + j);
                weighted += p[s] * dp[s];
            }
            for (std::size_t s = 0; s < tk; ++s) {
                const double ds = p[s] * (dp[s] - weighted) * scale;
                for (std::size_t j = 0; j < dh; ++j) {
                    dq(t, h * dh + j) += ds * k(s, h * dh + j);
                    dk(s, h * dh + j) += ds * q(t, h * dh + j);
                    dv(s, h * dh + j) += p[s] * dout(t, h * dh + j);
                }
            }
        }
    }
}

}  // namespace reference

}  // namespace nodpred::kernels
