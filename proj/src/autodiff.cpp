#include "nodpred/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nodpred/error.hpp"
#include "nodpred/vmath.hpp"

namespace nodpred::autodiff {

Parameter& ParameterStore::add(const std::string& name, Matrix init) {
    if (contains(name)) fail(ErrorKind::Config, "duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->grad = Matrix(init.rows(), init.cols());
    p->value = std::move(init);
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
    for (auto& p : params_) {
        if (p->name == name) return *p;
    }
    fail(ErrorKind::Config, "unknown parameter '" + name + "'");
}

const Parameter& ParameterStore::get(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return *p;
    }
    fail(ErrorKind::Config, "unknown parameter '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
    for (const auto& p : params_) {
        if (p->name == name) return true;
    }
    return false;
}

std::size_t ParameterStore::total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
}

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Tape::param(const Parameter& p) {
    Node n;
    n.external = &p.value;
    if (record_) n.param = const_cast<Parameter*>(&p);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external != nullptr ? *n.external : n.value;
}

Matrix& Tape::grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) {
        const Matrix& val = n.external != nullptr ? *n.external : n.value;
        n.grad = Matrix(val.rows(), val.cols());
    }
    return n.grad;
}

Var Tape::push(Matrix value, BackwardFn backward_fn) {
    Node n;
    n.value = std::move(value);
    if (record_) n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

void Tape::backward(Var root) {
    if (!record_) fail(ErrorKind::Config, "backward on a tape that did not record");
    const Matrix& r = value(root);
    if (r.rows() != 1 || r.cols() != 1) fail(ErrorKind::Shape, "backward root must be a scalar");
    if (!std::isfinite(r(0, 0))) fail(ErrorKind::NonFinite, "loss is not finite");
    grad(root)(0, 0) = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty()) continue;
        if (n.backward_fn) n.backward_fn(*this, Var{i});
        if (n.param != nullptr) {
            auto& dst = n.param->grad.values();
            const auto& src = n.grad.values();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    }
}

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) fail(ErrorKind::Shape, std::string(op) + ": operand shapes differ");
}

void require_scalar(const Matrix& a, const char* op) {
    if (a.rows() != 1 || a.cols() != 1) fail(ErrorKind::Shape, std::string(op) + ": expected a scalar");
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    Matrix out;
    kernels::matmul(t.value(a), t.value(b), out);
    return t.push(std::move(out), [a, b](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        kernels::matmul_nt(g, tape.value(b), tape.grad(a), true);
        kernels::matmul_tn(tape.value(a), g, tape.grad(b), true);
    });
}

Var add(Tape& t, Var a, Var b) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    require_same(av, bv, "add");
    Matrix out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += bv.data()[i];
    return t.push(std::move(out), [a, b](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        for (Var x : {a, b}) {
            Matrix& gx = tape.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += g.data()[i];
        }
    });
}

Var add_bias(Tape& t, Var a, Var bias) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(bias);
    if (bv.rows() != 1 || bv.cols() != av.cols()) fail(ErrorKind::Shape, "add_bias: bias must be 1 x cols");
    Matrix out = av;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
    }
    return t.push(std::move(out), [a, bias](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        Matrix& ga = tape.grad(a);
        Matrix& gb = tape.grad(bias);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(r, c) += g(r, c);
                gb(0, c) += g(r, c);
            }
        }
    });
}

// tanh(u) = 1 - 2 / (exp(2u) + 1), batched through the vector exp; |u| is
// clamped at 20 where tanh is already +-1 in double precision.
Var gelu(Tape& t, Var a) {
    const Matrix& av = t.value(a);
    const std::size_t n = av.size();
    std::vector<double> th(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = av.data()[i];
        th[i] = 2.0 * std::clamp(kGeluC * (x + kGeluA * x * x * x), -20.0, 20.0);
    }
    exp_inplace(th.data(), n);
    Matrix out(av.rows(), av.cols());
    for (std::size_t i = 0; i < n; ++i) {
        th[i] = 1.0 - 2.0 / (th[i] + 1.0);
        out.data()[i] = 0.5 * av.data()[i] * (1.0 + th[i]);
    }
    if (!t.recording()) th.clear();
    return t.push(std::move(out), [a, th = std::move(th)](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        const Matrix& x = tape.value(a);
        Matrix& ga = tape.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = x.data()[i];
            const double d = 0.5 * (1.0 + th[i]) +
                             0.5 * v * (1.0 - th[i] * th[i]) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
            ga.data()[i] += g.data()[i] * d;
        }
    });
}

Var layer_norm(Tape& t, Var a, Var gain, Var shift, double eps) {
    const Matrix& x = t.value(a);
    const Matrix& gv = t.value(gain);
    const Matrix& bv = t.value(shift);
    const std::size_t n = x.cols();
    if (gv.rows() != 1 || gv.cols() != n || !gv.same_shape(bv)) {
        fail(ErrorKind::Shape, "layer_norm: gain/shift must be 1 x cols");
    }
    Matrix out(x.rows(), n);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) out(r, c) = (row[c] - mean) * inv * gv(0, c) + bv(0, c);
    }
    return t.push(std::move(out), [a, gain, shift, eps](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        const Matrix& xv = tape.value(a);
        const Matrix& gainv = tape.value(gain);
        Matrix& ga = tape.grad(a);
        Matrix& gg = tape.grad(gain);
        Matrix& gs = tape.grad(shift);
        const std::size_t cols = xv.cols();
        std::vector<double> xhat(cols), dxhat(cols);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
            const auto row = xv.row(r);
            double mean = 0.0;
            for (double v : row) mean += v;
            mean /= static_cast<double>(cols);
            double var = 0.0;
            for (double v : row) var += (v - mean) * (v - mean);
            var /= static_cast<double>(cols);
            const double inv = 1.0 / std::sqrt(var + eps);
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                xhat[c] = (row[c] - mean) * inv;
                dxhat[c] = g(r, c) * gainv(0, c);
                gg(0, c) += g(r, c) * xhat[c];
                gs(0, c) += g(r, c);
                mean_d += dxhat[c];
                mean_dx += dxhat[c] * xhat[c];
            }
            mean_d /= static_cast<double>(cols);
            mean_dx /= static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
                ga(r, c) += inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
            }
        }
    });
}

Var attention(Tape& t, Var q, Var k, Var v, std::size_t heads, std::vector<double> slopes, bool causal) {
    auto probs = std::make_shared<std::vector<double>>();
    Matrix out;
    kernels::AttentionSpec spec{heads, causal, slopes};
    kernels::attention_forward(t.value(q), t.value(k), t.value(v), spec,
                               out, t.recording() ? probs.get() : nullptr);
    return t.push(std::move(out), [q, k, v, heads, causal, probs, slopes = std::move(slopes)](Tape& tape, Var self) {
        kernels::AttentionSpec s{heads, causal, slopes};
        kernels::attention_backward(tape.value(q), tape.value(k), tape.value(v), s, *probs,
                                    tape.grad(self), tape.grad(q), tape.grad(k), tape.grad(v));
    });
}

Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t width) {
    const Matrix& av = t.value(a);
    if (start + width > av.cols()) fail(ErrorKind::Shape, "slice_cols: range exceeds width");
    Matrix out(av.rows(), width);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < width; ++c) out(r, c) = av(r, start + c);
    }
    return t.push(std::move(out), [a, start](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        Matrix& ga = tape.grad(a);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, start + c) += g(r, c);
        }
    });
}

Var slice_rows(Tape& t, Var a, std::size_t start, std::size_t count) {
    const Matrix& av = t.value(a);
    if (start + count > av.rows()) fail(ErrorKind::Shape, "slice_rows: range exceeds height");
    const auto first = av.values().begin() + static_cast<std::ptrdiff_t>(start * av.cols());
    Matrix out(count, av.cols(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * av.cols())));
    return t.push(std::move(out), [a, start](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        Matrix& ga = tape.grad(a);
        const std::size_t base = start * ga.cols();
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[base + i] += g.data()[i];
    });
}

Var concat_cols(Tape& t, Var a, Var b) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (av.rows() != bv.rows()) fail(ErrorKind::Shape, "concat_cols: row counts differ");
    Matrix out(av.rows(), av.cols() + bv.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c);
        for (std::size_t c = 0; c < bv.cols(); ++c) out(r, av.cols() + c) = bv(r, c);
    }
    const std::size_t split = av.cols();
    return t.push(std::move(out), [a, b, split](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        Matrix& ga = tape.grad(a);
        Matrix& gb = tape.grad(b);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < split; ++c) ga(r, c) += g(r, c);
            for (std::size_t c = split; c < g.cols(); ++c) gb(r, c - split) += g(r, c);
        }
    });
}

Var reshape(Tape& t, Var a, std::size_t rows, std::size_t cols) {
    Matrix out = t.value(a).reshaped(rows, cols);
    return t.push(std::move(out), [a](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        Matrix& ga = tape.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
    });
}

Var pool_rows(Tape& t, Var a, std::size_t factor) {
    const Matrix& av = t.value(a);
    if (factor == 0 || av.rows() % factor != 0) fail(ErrorKind::Shape, "pool_rows: rows not divisible by factor");
    if (factor == 1) return a;
    Matrix out(av.rows() / factor, av.cols());
    const double inv = 1.0 / static_cast<double>(factor);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t f = 0; f < factor; ++f) {
            const auto src = av.row(r * factor + f);
            for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) += src[c];
        }
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) *= inv;
    }
    return t.push(std::move(out), [a, factor, inv](Tape& tape, Var self) {
        const Matrix& g = tape.grad(self);
        Matrix& ga = tape.grad(a);
        for (std::size_t r = 0; r < ga.rows(); ++r) {
            for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r / factor, c) * inv;
        }
    });
}

Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& targets,
                          const std::vector<double>& class_weight, double eps) {
    const Matrix& z = t.value(logits);
    if (targets.size() != z.rows()) fail(ErrorKind::Shape, "softmax_cross_entropy: one target per row required");
    if (class_weight.size() != z.cols()) fail(ErrorKind::Shape, "softmax_cross_entropy: one weight per class required");
    Matrix probs(z.rows(), z.cols());
    std::size_t counted = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto row = z.row(r);
        double peak = row[0];
        for (double v : row) peak = std::max(peak, v);
        double sum = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            probs(r, c) = std::exp(row[c] - peak);
            sum += probs(r, c);
        }
        for (std::size_t c = 0; c < row.size(); ++c) probs(r, c) /= sum;
        const int y = targets[r];
        if (y < 0) continue;
        if (static_cast<std::size_t>(y) >= z.cols()) fail(ErrorKind::Range, "softmax_cross_entropy: target out of range");
        ++counted;
        total += -class_weight[static_cast<std::size_t>(y)] * std::log(std::max(probs(r, static_cast<std::size_t>(y)), eps));
    }
    Matrix out(1, 1, counted > 0 ? total / static_cast<double>(counted) : 0.0);
    return t.push(std::move(out), [logits, targets, class_weight, eps, counted, probs = std::move(probs)](Tape& tape, Var self) {
        if (counted == 0) return;
        const double scale = tape.grad(self)(0, 0) / static_cast<double>(counted);
        Matrix& gz = tape.grad(logits);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
            const int y = targets[r];
            if (y < 0) continue;
            const auto yc = static_cast<std::size_t>(y);
            if (probs(r, yc) <= eps) continue;
            const double w = class_weight[yc] * scale;
            for (std::size_t c = 0; c < probs.cols(); ++c) {
                gz(r, c) += w * (probs(r, c) - (c == yc ? 1.0 : 0.0));
            }
        }
    });
}

Var sigmoid_cross_entropy(Tape& t, Var logits, const Matrix& targets, double eps) {
    const Matrix& z = t.value(logits);
    require_same(z, targets, "sigmoid_cross_entropy");
    Matrix sig(z.rows(), z.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double x = z.data()[i];
        const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        sig.data()[i] = s;
        const double y = targets.data()[i];
        total += -(y * std::log(std::max(s, eps)) + (1.0 - y) * std::log(std::max(1.0 - s, eps)));
    }
    const std::size_t n = z.size();
    Matrix out(1, 1, n > 0 ? total / static_cast<double>(n) : 0.0);
    return t.push(std::move(out), [logits, targets, eps, n, sig = std::move(sig)](Tape& tape, Var self) {
        if (n == 0) return;
        const double scale = tape.grad(self)(0, 0) / static_cast<double>(n);
        Matrix& gz = tape.grad(logits);
        for (std::size_t i = 0; i < n; ++i) {
            const double s = sig.data()[i];
            const double y = targets.data()[i];
            double d = 0.0;
            if (s > eps) d -= y * (1.0 - s);
            if (1.0 - s > eps) d += (1.0 - y) * s;
            gz.data()[i] += scale * d;
        }
    });
}

Var weighted_sum(Tape& t, const std::vector<std::pair<Var, double>>& terms) {
    double total = 0.0;
    for (const auto& [v, w] : terms) {
        require_scalar(t.value(v), "weighted_sum");
        total += w * t.value(v)(0, 0);
    }
    return t.push(Matrix(1, 1, total), [terms](Tape& tape, Var self) {
        const double g = tape.grad(self)(0, 0);
        for (const auto& [v, w] : terms) tape.grad(v)(0, 0) += w * g;
    });
}

}  // namespace nodpred::autodiff
