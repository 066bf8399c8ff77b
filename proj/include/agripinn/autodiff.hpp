/**
 * @file autodiff.hpp
 * @brief Eager reverse-mode automatic differentiation over dense 2-D arrays.
 *
 * Every primitive computes its value immediately and records a
 * vector-Jacobian product on the owning Tape. Tapes are append-only, so node
 * order is a valid topological order and backward() is a single reverse sweep.
 *
 * Values are row-major double matrices. Binary elementwise primitives
 * broadcast a 1x1, 1xC or Rx1 operand against the other operand.
 *
 * A Tape belongs to one thread. Distinct tapes may run concurrently.
 */
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace agripinn::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

std::string shape_string(const Matrix& m);

enum class Op {
    constant, leaf, parameter,
    add, sub, mul, div, neg, scale, add_scalar,
    exp, log, tanh, sigmoid, softplus, relu, square, soft_cap,
    matmul, sum, mean, broadcast,
    slice_cols, concat_cols, concat_rows, take_rows,
    dropout, conv1d,
};

const char* op_name(Op op) noexcept;

/// Named trainable arrays plus optimizer slots. Names are unique and keep
/// insertion order, which fixes the iteration order of every optimizer loop.
class ParameterStore {
public:
    void add(const std::string& name, Matrix value);
    bool contains(const std::string& name) const;
    const Matrix& value(const std::string& name) const;
    Matrix& value(const std::string& name);
    const std::vector<std::string>& names() const noexcept { return order_; }
    std::size_t size() const noexcept { return order_.size(); }
    std::size_t parameter_count() const;

    /// Optimizer state buffer with the parameter's shape, zero-initialized on first use.
    Matrix& slot(const std::string& name, const std::string& slot_name);
    bool has_slot(const std::string& name, const std::string& slot_name) const;

    std::int64_t step = 0;

    bool operator==(const ParameterStore& other) const;

private:
    std::map<std::string, Matrix> values_;
    std::map<std::string, std::map<std::string, Matrix>> slots_;
    std::vector<std::string> order_;
};

using GradientMap = std::map<std::string, Matrix>;

class Tape;

/// Handle to a node on a Tape. Cheap to copy.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Matrix& value() const;
    const Matrix& adjoint() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const;
    Op op() const;

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// With record = false no backward rules are stored (inference mode).
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var constant(double value);
    /// Differentiable input whose adjoint can be read after backward().
    Var leaf(Matrix value);
    /// Leaf bound to a named parameter of `store`; its adjoint shows up in gradients().
    Var parameter(const ParameterStore& store, const std::string& name);

    /// Reverse sweep from a 1x1 root. Adjoints accumulate across calls.
    void backward(Var root);
    void zero_adjoints();

    GradientMap gradients() const;

    bool recording() const noexcept { return record_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    using Vjp = std::function<void(const Matrix& out_adjoint, std::vector<Matrix*>& parent_adjoints)>;

    /// Appends a node. `vjp` receives the node's adjoint and one accumulator per parent
    /// (nullptr for parents that do not need gradients).
    Var push(Op op, Matrix value, std::vector<Var> parents, Vjp vjp);

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& adjoint(std::size_t id) const;
    Op op(std::size_t id) const { return nodes_[id].op; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Matrix value;
        Matrix adjoint;
        Op op = Op::constant;
        std::vector<std::size_t> parents;
        Vjp vjp;
        bool requires_grad = false;
        std::string param_name;
    };
    std::vector<Node> nodes_;
    bool record_;
};

// Elementwise arithmetic with broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, Var a) { return add_scalar(a, c); }
inline Var operator-(Var a, double c) { return add_scalar(a, -c); }
inline Var operator-(double c, Var a) { return add_scalar(neg(a), c); }

// Elementwise nonlinearities.
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var relu(Var a);
Var square(Var a);
/// Smooth saturating cap c * u / (1 + (u/c)^4)^(1/4) for u >= 0.
Var soft_cap(Var a, double cap);

Var matmul(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
/// Explicitly expands a broadcastable operand to rows x cols.
Var broadcast(Var a, Index rows, Index cols);

Var slice_cols(Var a, Index begin, Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Gathers rows by index (repeats allowed); the backward rule scatter-adds.
Var take_rows(Var a, std::vector<Index> rows);

/// Inverted dropout. The mask is drawn once from `rng` and kept for backward.
Var dropout(Var a, double rate, std::mt19937_64& rng);

/// Same-padded 1-D convolution over time. `x` holds `batch` sequences of `steps`
/// rows each (row = b * steps + t); `w` is (kernel * in_channels) x out_channels
/// with tap-major rows. Returns (batch * steps) x out_channels.
Var conv1d(Var x, Var w, Index steps, Index kernel);

// Scalar helpers shared with the bounded heads.
double softplus_value(double x) noexcept;
double sigmoid_value(double x) noexcept;
double soft_cap_value(double u, double cap) noexcept;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

using ScalarGraph = std::function<Var(Tape&, const ParameterStore&)>;

/// Central-difference check of every parameter element against backward().
/// Error metric: |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). eps must lie in [1e-7, 1e-3].
GradCheckResult grad_check(const ScalarGraph& f, const ParameterStore& store, double eps);

/// One-shot evaluation: builds the graph, runs backward, returns (loss, gradients).
std::pair<double, GradientMap> value_and_grad(const ScalarGraph& f, const ParameterStore& store);

/// Versioned text checkpoint; values are written with round-trip precision.
void save_checkpoint(const std::string& path, const ParameterStore& store);
ParameterStore load_checkpoint(const std::string& path);
std::string checkpoint_text(const ParameterStore& store);

}  // namespace agripinn::ad
