#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nodpred/kernels.hpp"
#include "nodpred/matrix.hpp"

// Minimal reverse-mode differentiation over matrices. A Tape records the
// operations of one forward pass; backward() walks them in reverse and
// accumulates into Parameter::grad. With recording off, ops only compute
// values, which is the inference path.
namespace nodpred::autodiff {

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
};

/// Named trainable tensors with stable addresses, iterated in registration order.
class ParameterStore {
public:
    Parameter& add(const std::string& name, Matrix init);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::size_t size() const noexcept { return params_.size(); }
    Parameter& at(std::size_t i) { return *params_[i]; }
    const Parameter& at(std::size_t i) const { return *params_[i]; }

    std::size_t total_values() const;
    void zero_grad();

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

struct Var {
    std::size_t id = 0;
};

class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return record_; }

    Var constant(Matrix value);
    /// Gradients reach p.grad only when recording; the caller then owns the
    /// parameter exclusively.
    Var param(const Parameter& p);

    const Matrix& value(Var v) const;
    /// Gradient buffer of a node, allocated as zeros on first use.
    Matrix& grad(Var v);

    /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to parameters.
    void backward(Var root);

    // used by op implementations
    using BackwardFn = std::function<void(Tape&, Var self)>;
    Var push(Matrix value, BackwardFn backward_fn);

private:
    struct Node {
        Matrix value;
        const Matrix* external = nullptr;
        Parameter* param = nullptr;
        Matrix grad;
        BackwardFn backward_fn;
    };

    bool record_;
    std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
/// Adds a 1 x n bias row to every row of a.
Var add_bias(Tape& t, Var a, Var bias);
Var gelu(Tape& t, Var a);
/// Row-wise normalization with learned 1 x n gain and shift.
Var layer_norm(Tape& t, Var a, Var gain, Var shift, double eps = 1e-5);
Var attention(Tape& t, Var q, Var k, Var v, std::size_t heads, std::vector<double> slopes, bool causal);
Var slice_cols(Tape& t, Var a, std::size_t start, std::size_t width);
Var slice_rows(Tape& t, Var a, std::size_t start, std::size_t count);
Var concat_cols(Tape& t, Var a, Var b);
Var reshape(Tape& t, Var a, std::size_t rows, std::size_t cols);
/// Averages consecutive groups of `factor` rows.
Var pool_rows(Tape& t, Var a, std::size_t factor);

/// Mean over rows with target >= 0 of -class_weight[y] * log(max(softmax(row)[y], eps)).
/// Rows with a negative target are excluded. Returns a 1x1 node; zero if no rows count.
Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& targets,
                          const std::vector<double>& class_weight, double eps);
/// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets over all entries.
Var sigmoid_cross_entropy(Tape& t, Var logits, const Matrix& targets, double eps);
/// sum_i w_i * s_i over 1x1 nodes.
Var weighted_sum(Tape& t, const std::vector<std::pair<Var, double>>& terms);

}  // namespace nodpred::autodiff
