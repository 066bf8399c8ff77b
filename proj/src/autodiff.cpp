#include "agripinn/autodiff.hpp"

#include "agripinn/csv.hpp"
#include "agripinn/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cmath>
#include <memory>
#include <sstream>

namespace agripinn::ad {

std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

const char* op_name(Op op) noexcept {
    switch (op) {
        case Op::constant: return "constant";
        case Op::leaf: return "leaf";
        case Op::parameter: return "parameter";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::neg: return "neg";
        case Op::scale: return "scale";
        case Op::add_scalar: return "add_scalar";
        case Op::exp: return "exp";
        case Op::log: return "log";
        case Op::tanh: return "tanh";
        case Op::sigmoid: return "sigmoid";
        case Op::softplus: return "softplus";
        case Op::relu: return "relu";
        case Op::square: return "square";
        case Op::soft_cap: return "soft_cap";
        case Op::matmul: return "matmul";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::broadcast: return "broadcast";
        case Op::slice_cols: return "slice_cols";
        case Op::concat_cols: return "concat_cols";
        case Op::concat_rows: return "concat_rows";
        case Op::take_rows: return "take_rows";
        case Op::dropout: return "dropout";
        case Op::conv1d: return "conv1d";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// ParameterStore

void ParameterStore::add(const std::string& name, Matrix value) {
    if (values_.count(name)) throw ArgumentError("duplicate parameter name '" + name + "'");
    values_.emplace(name, std::move(value));
    order_.push_back(name);
}

bool ParameterStore::contains(const std::string& name) const { return values_.count(name) != 0; }

const Matrix& ParameterStore::value(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return it->second;
}

Matrix& ParameterStore::value(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ArgumentError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : values_) n += static_cast<std::size_t>(v.size());
    return n;
}

Matrix& ParameterStore::slot(const std::string& name, const std::string& slot_name) {
    const auto& v = value(name);
    auto& s = slots_[name][slot_name];
    if (s.rows() != v.rows() || s.cols() != v.cols()) s = Matrix::Zero(v.rows(), v.cols());
    return s;
}

bool ParameterStore::has_slot(const std::string& name, const std::string& slot_name) const {
    auto it = slots_.find(name);
    return it != slots_.end() && it->second.count(slot_name) != 0;
}

bool ParameterStore::operator==(const ParameterStore& other) const {
    if (order_ != other.order_ || step != other.step) return false;
    for (const auto& name : order_) {
        const auto& a = value(name);
        const auto& b = other.value(name);
        if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
        // Bitwise comparison; NaN payloads never appear in a valid store.
        if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::adjoint() const { return tape_->adjoint(id_); }
Op Var::op() const { return tape_->op(id_); }

double Var::scalar() const {
    const auto& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar(): node has shape " + shape_string(v));
    return v(0, 0);
}

Var Tape::push(Op op, Matrix value, std::vector<Var> parents, Vjp vjp) {
    Node n;
    n.op = op;
    n.parents.reserve(parents.size());
    bool any = false;
    for (const auto& p : parents) {
        if (p.tape() != this) throw ArgumentError(std::string(op_name(op)) + ": operand belongs to another tape");
        n.parents.push_back(p.id());
        any = any || nodes_[p.id()].requires_grad;
    }
    n.requires_grad = record_ && any;
    if (n.requires_grad) n.vjp = std::move(vjp);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::leaf(Matrix value) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    n.requires_grad = record_;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const ParameterStore& store, const std::string& name) {
    Node n;
    n.op = Op::parameter;
    n.value = store.value(name);
    n.requires_grad = record_;
    n.param_name = name;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::adjoint(std::size_t id) const {
    auto& n = const_cast<Node&>(nodes_[id]);
    if (n.adjoint.rows() != n.value.rows() || n.adjoint.cols() != n.value.cols()) {
        n.adjoint = Matrix::Zero(n.value.rows(), n.value.cols());
    }
    return n.adjoint;
}

void Tape::zero_adjoints() {
    for (auto& n : nodes_) n.adjoint.resize(0, 0);
}

void Tape::backward(Var root) {
    if (root.tape() != this) throw ArgumentError("backward: root belongs to another tape");
    const auto& rv = nodes_[root.id()].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw ArgumentError("backward: root must be scalar, got shape " + shape_string(rv));
    }
    if (!record_) throw ArgumentError("backward: tape was created without recording");

    // Fresh buffers so repeated calls add exactly one pass worth of adjoint.
    std::vector<Matrix> adj(root.id() + 1);
    adj[root.id()] = Matrix::Ones(1, 1);
    std::vector<Matrix*> ptrs;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
        auto& node = nodes_[id];
        if (adj[id].size() == 0 || !node.requires_grad || !node.vjp) continue;
        ptrs.assign(node.parents.size(), nullptr);
        for (std::size_t i = 0; i < node.parents.size(); ++i) {
            const auto pid = node.parents[i];
            if (!nodes_[pid].requires_grad) continue;
            if (adj[pid].size() == 0) adj[pid] = Matrix::Zero(nodes_[pid].value.rows(), nodes_[pid].value.cols());
            ptrs[i] = &adj[pid];
        }
        node.vjp(adj[id], ptrs);
    }
    for (std::size_t id = 0; id <= root.id(); ++id) {
        if (adj[id].size() == 0) continue;
        auto& n = nodes_[id];
        if (n.adjoint.rows() != n.value.rows() || n.adjoint.cols() != n.value.cols()) {
            n.adjoint = std::move(adj[id]);
        } else {
            n.adjoint += adj[id];
        }
    }
}

GradientMap Tape::gradients() const {
    GradientMap g;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const auto& n = nodes_[id];
        if (n.op != Op::parameter) continue;
        const auto& a = adjoint(id);
        auto it = g.find(n.param_name);
        if (it == g.end()) {
            g.emplace(n.param_name, a);
        } else {
            it->second += a;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

bool compatible(Index n, Index target) { return n == target || n == 1; }

std::pair<Index, Index> broadcast_shape(const char* op, const Matrix& a, const Matrix& b) {
    const Index r = std::max(a.rows(), b.rows());
    const Index c = std::max(a.cols(), b.cols());
    if (!compatible(a.rows(), r) || !compatible(a.cols(), c) || !compatible(b.rows(), r) ||
        !compatible(b.cols(), c)) {
        throw ShapeError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                         " are not broadcast-compatible");
    }
    return {r, c};
}

Matrix expand(const Matrix& a, Index r, Index c) {
    if (a.rows() == r && a.cols() == c) return a;
    if (a.rows() == 1 && a.cols() == 1) return Matrix::Constant(r, c, a(0, 0));
    if (a.rows() == 1) return a.replicate(r, 1);
    return a.replicate(1, c);
}

Matrix reduce_to(const Matrix& g, Index r, Index c) {
    if (g.rows() == r && g.cols() == c) return g;
    if (r == 1 && c == 1) return Matrix::Constant(1, 1, g.sum());
    if (r == 1) return g.colwise().sum();
    return g.rowwise().sum();
}

Tape& tape_of(Var a) {
    if (!a.tape()) throw ArgumentError("operation on an unbound Var");
    return *a.tape();
}

Tape& tape_of(Var a, Var b) {
    if (a.tape() != b.tape()) throw ArgumentError("operands belong to different tapes");
    return tape_of(a);
}

template <class F>
Var unary(Op op, Var a, Matrix value, F&& local_grad) {
    Tape& t = tape_of(a);
    const std::size_t ia = a.id();
    const std::size_t iy = t.size();
    Tape* tp = &t;
    return t.push(op, std::move(value), {a},
                  [tp, ia, iy, local_grad](const Matrix& g, std::vector<Matrix*>& pa) {
                      if (!pa[0]) return;
                      local_grad(g, tp->value(ia), tp->value(iy), *pa[0]);
                  });
}

}  // namespace

double softplus_value(double x) noexcept {
    if (std::isinf(x)) return x > 0 ? x : 0.0;
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_value(double x) noexcept {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double soft_cap_value(double u, double cap) noexcept {
    if (std::isinf(u)) return u > 0 ? cap : -cap;
    const double r = u / cap;
    if (std::abs(r) > 1e4) return (r > 0 ? cap : -cap) / std::pow(1.0 + std::pow(r, -4.0), 0.25);
    return u / std::pow(1.0 + r * r * r * r, 0.25);
}

namespace {

double soft_cap_derivative(double u, double cap) noexcept {
    if (std::isinf(u)) return 0.0;
    const double r = u / cap;
    if (std::abs(r) > 1e4) return std::pow(std::abs(r), -5.0) * std::pow(1.0 + std::pow(r, -4.0), -1.25);
    return std::pow(1.0 + r * r * r * r, -1.25);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise binary

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    auto [r, c] = broadcast_shape("add", A, B);
    Matrix y = (A.rows() == r && A.cols() == c && B.rows() == r && B.cols() == c) ? Matrix(A + B)
                                                                                   : Matrix(expand(A, r, c) + expand(B, r, c));
    const Index ar = A.rows(), ac = A.cols(), br = B.rows(), bc = B.cols();
    return t.push(Op::add, std::move(y), {a, b}, [ar, ac, br, bc](const Matrix& g, std::vector<Matrix*>& p) {
        if (p[0]) *p[0] += reduce_to(g, ar, ac);
        if (p[1]) *p[1] += reduce_to(g, br, bc);
    });
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    auto [r, c] = broadcast_shape("sub", A, B);
    Matrix y = (A.rows() == r && A.cols() == c && B.rows() == r && B.cols() == c) ? Matrix(A - B)
                                                                                   : Matrix(expand(A, r, c) - expand(B, r, c));
    const Index ar = A.rows(), ac = A.cols(), br = B.rows(), bc = B.cols();
    return t.push(Op::sub, std::move(y), {a, b}, [ar, ac, br, bc](const Matrix& g, std::vector<Matrix*>& p) {
        if (p[0]) *p[0] += reduce_to(g, ar, ac);
        if (p[1]) *p[1] -= reduce_to(g, br, bc);
    });
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    auto [r, c] = broadcast_shape("mul", a.value(), b.value());
    Matrix y = expand(a.value(), r, c).cwiseProduct(expand(b.value(), r, c));
    Tape* tp = &t;
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(Op::mul, std::move(y), {a, b}, [tp, ia, ib, r, c](const Matrix& g, std::vector<Matrix*>& p) {
        const auto& A = tp->value(ia);
        const auto& B = tp->value(ib);
        if (p[0]) *p[0] += reduce_to(g.cwiseProduct(expand(B, r, c)), A.rows(), A.cols());
        if (p[1]) *p[1] += reduce_to(g.cwiseProduct(expand(A, r, c)), B.rows(), B.cols());
    });
}

Var div(Var a, Var b) {
    Tape& t = tape_of(a, b);
    auto [r, c] = broadcast_shape("div", a.value(), b.value());
    Matrix y = expand(a.value(), r, c).cwiseQuotient(expand(b.value(), r, c));
    Tape* tp = &t;
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(Op::div, std::move(y), {a, b}, [tp, ia, ib, r, c](const Matrix& g, std::vector<Matrix*>& p) {
        const auto& A = tp->value(ia);
        const auto& B = tp->value(ib);
        const Matrix Be = expand(B, r, c);
        if (p[0]) *p[0] += reduce_to(g.cwiseQuotient(Be), A.rows(), A.cols());
        if (p[1]) {
            const Matrix Ae = expand(A, r, c);
            Matrix gb = -(g.array() * Ae.array() / (Be.array() * Be.array())).matrix();
            *p[1] += reduce_to(gb, B.rows(), B.cols());
        }
    });
}

Var neg(Var a) {
    return unary(Op::neg, a, -a.value(), [](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) { pa -= g; });
}

Var scale(Var a, double c) {
    return unary(Op::scale, a, c * a.value(),
                 [c](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) { pa += c * g; });
}

Var add_scalar(Var a, double c) {
    return unary(Op::add_scalar, a, (a.value().array() + c).matrix(),
                 [](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) { pa += g; });
}

// ---------------------------------------------------------------------------
// Elementwise unary

Var exp(Var a) {
    return unary(Op::exp, a, a.value().array().exp().matrix(),
                 [](const Matrix& g, const Matrix&, const Matrix& y, Matrix& pa) { pa += g.cwiseProduct(y); });
}

Var log(Var a) {
    return unary(Op::log, a, a.value().array().log().matrix(),
                 [](const Matrix& g, const Matrix& x, const Matrix&, Matrix& pa) { pa += g.cwiseQuotient(x); });
}

Var tanh(Var a) {
    return unary(Op::tanh, a, a.value().array().tanh().matrix(),
                 [](const Matrix& g, const Matrix&, const Matrix& y, Matrix& pa) {
                     pa.array() += g.array() * (1.0 - y.array().square());
                 });
}

Var sigmoid(Var a) {
    return unary(Op::sigmoid, a, a.value().unaryExpr([](double x) { return sigmoid_value(x); }),
                 [](const Matrix& g, const Matrix&, const Matrix& y, Matrix& pa) {
                     pa.array() += g.array() * y.array() * (1.0 - y.array());
                 });
}

Var softplus(Var a) {
    return unary(Op::softplus, a, a.value().unaryExpr([](double x) { return softplus_value(x); }),
                 [](const Matrix& g, const Matrix& x, const Matrix&, Matrix& pa) {
                     pa.array() += g.array() * x.unaryExpr([](double v) { return sigmoid_value(v); }).array();
                 });
}

Var relu(Var a) {
    return unary(Op::relu, a, a.value().cwiseMax(0.0),
                 [](const Matrix& g, const Matrix& x, const Matrix&, Matrix& pa) {
                     pa.array() += (x.array() > 0.0).select(g.array(), 0.0);
                 });
}

Var square(Var a) {
    return unary(Op::square, a, a.value().array().square().matrix(),
                 [](const Matrix& g, const Matrix& x, const Matrix&, Matrix& pa) {
                     pa.array() += 2.0 * g.array() * x.array();
                 });
}

Var soft_cap(Var a, double cap) {
    if (!(cap > 0.0)) throw ArgumentError("soft_cap: cap must be > 0");
    return unary(Op::soft_cap, a, a.value().unaryExpr([cap](double u) { return soft_cap_value(u, cap); }),
                 [cap](const Matrix& g, const Matrix& x, const Matrix&, Matrix& pa) {
                     pa.array() += g.array() * x.unaryExpr([cap](double u) { return soft_cap_derivative(u, cap); }).array();
                 });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.cols() != B.rows()) {
        throw ShapeError("matmul: shapes " + shape_string(A) + " and " + shape_string(B) + " do not chain");
    }
    Matrix y(A.rows(), B.cols());
    y.noalias() = A * B;
    Tape* tp = &t;
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(Op::matmul, std::move(y), {a, b}, [tp, ia, ib](const Matrix& g, std::vector<Matrix*>& p) {
        if (p[0]) p[0]->noalias() += g * tp->value(ib).transpose();
        if (p[1]) p[1]->noalias() += tp->value(ia).transpose() * g;
    });
}

Var sum(Var a) {
    const Index r = a.rows(), c = a.cols();
    return unary(Op::sum, a, Matrix::Constant(1, 1, a.value().sum()),
                 [r, c](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) {
                     pa.array() += g(0, 0);
                     (void)r;
                     (void)c;
                 });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw ShapeError("mean: empty operand");
    return unary(Op::mean, a, Matrix::Constant(1, 1, a.value().sum() / n),
                 [n](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) { pa.array() += g(0, 0) / n; });
}

Var broadcast(Var a, Index rows, Index cols) {
    const auto& A = a.value();
    if (!compatible(A.rows(), rows) || !compatible(A.cols(), cols)) {
        throw ShapeError("broadcast: cannot expand " + shape_string(A) + " to " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
    const Index ar = A.rows(), ac = A.cols();
    return unary(Op::broadcast, a, expand(A, rows, cols),
                 [ar, ac](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) { pa += reduce_to(g, ar, ac); });
}

Var slice_cols(Var a, Index begin, Index count) {
    const auto& A = a.value();
    if (begin < 0 || count < 0 || begin + count > A.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(A));
    }
    return unary(Op::slice_cols, a, A.middleCols(begin, count),
                 [begin, count](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) {
                     pa.middleCols(begin, count) += g;
                 });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: no operands");
    Tape& t = tape_of(parts.front());
    const Index rows = parts.front().rows();
    Index cols = 0;
    std::vector<Index> widths;
    for (const auto& p : parts) {
        if (p.rows() != rows) {
            throw ShapeError("concat_cols: shapes " + shape_string(parts.front().value()) + " and " +
                             shape_string(p.value()) + " differ in rows");
        }
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Matrix y(rows, cols);
    Index off = 0;
    for (const auto& p : parts) {
        y.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return t.push(Op::concat_cols, std::move(y), parts, [widths](const Matrix& g, std::vector<Matrix*>& p) {
        Index o = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (p[i]) *p[i] += g.middleCols(o, widths[i]);
            o += widths[i];
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: no operands");
    Tape& t = tape_of(parts.front());
    const Index cols = parts.front().cols();
    Index rows = 0;
    std::vector<Index> heights;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw ShapeError("concat_rows: shapes " + shape_string(parts.front().value()) + " and " +
                             shape_string(p.value()) + " differ in columns");
        }
        heights.push_back(p.rows());
        rows += p.rows();
    }
    Matrix y(rows, cols);
    Index off = 0;
    for (const auto& p : parts) {
        y.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    return t.push(Op::concat_rows, std::move(y), parts, [heights](const Matrix& g, std::vector<Matrix*>& p) {
        Index o = 0;
        for (std::size_t i = 0; i < heights.size(); ++i) {
            if (p[i]) *p[i] += g.middleRows(o, heights[i]);
            o += heights[i];
        }
    });
}

Var take_rows(Var a, std::vector<Index> rows) {
    const auto& A = a.value();
    Matrix y(static_cast<Index>(rows.size()), A.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= A.rows()) {
            throw ShapeError("take_rows: row " + std::to_string(rows[i]) + " outside " + shape_string(A));
        }
        y.row(static_cast<Index>(i)) = A.row(rows[i]);
    }
    auto idx = std::make_shared<const std::vector<Index>>(std::move(rows));
    return unary(Op::take_rows, a, std::move(y), [idx](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) {
        for (std::size_t i = 0; i < idx->size(); ++i) pa.row((*idx)[i]) += g.row(static_cast<Index>(i));
    });
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout: rate must lie in [0, 1)");
    if (rate == 0.0) return a;
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<Matrix>(a.rows(), a.cols());
    for (Index i = 0; i < mask->size(); ++i) {
        // 53-bit uniform in [0, 1); independent of the standard library's distributions.
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        mask->data()[i] = u < keep ? 1.0 / keep : 0.0;
    }
    Matrix y = a.value().cwiseProduct(*mask);
    return unary(Op::dropout, a, std::move(y), [mask](const Matrix& g, const Matrix&, const Matrix&, Matrix& pa) {
        pa += g.cwiseProduct(*mask);
    });
}

Var conv1d(Var x, Var w, Index steps, Index kernel) {
    Tape& t = tape_of(x, w);
    const auto& X = x.value();
    const auto& W = w.value();
    if (kernel < 1 || kernel % 2 == 0) throw ArgumentError("conv1d: kernel must be odd and positive");
    if (steps < 1 || X.rows() % steps != 0) {
        throw ShapeError("conv1d: input rows " + std::to_string(X.rows()) + " not a multiple of steps " +
                         std::to_string(steps));
    }
    const Index cin = X.cols();
    if (W.rows() != kernel * cin) {
        throw ShapeError("conv1d: weight shape " + shape_string(W) + " does not match input " + shape_string(X) +
                         " with kernel " + std::to_string(kernel));
    }
    const Index batch = X.rows() / steps;
    const Index pad = kernel / 2;
    auto col = std::make_shared<Matrix>(Matrix::Zero(X.rows(), kernel * cin));
    for (Index b = 0; b < batch; ++b) {
        for (Index s = 0; s < steps; ++s) {
            for (Index k = 0; k < kernel; ++k) {
                const Index src = s + k - pad;
                if (src < 0 || src >= steps) continue;
                col->block(b * steps + s, k * cin, 1, cin) = X.row(b * steps + src);
            }
        }
    }
    Matrix y(X.rows(), W.cols());
    y.noalias() = (*col) * W;
    Tape* tp = &t;
    const std::size_t iw = w.id();
    return t.push(Op::conv1d, std::move(y), {x, w},
                  [tp, iw, col, batch, steps, kernel, cin, pad](const Matrix& g, std::vector<Matrix*>& p) {
                      if (p[1]) p[1]->noalias() += col->transpose() * g;
                      if (p[0]) {
                          Matrix gcol = g * tp->value(iw).transpose();
                          for (Index b = 0; b < batch; ++b) {
                              for (Index s = 0; s < steps; ++s) {
                                  for (Index k = 0; k < kernel; ++k) {
                                      const Index src = s + k - pad;
                                      if (src < 0 || src >= steps) continue;
                                      p[0]->row(b * steps + src) += gcol.block(b * steps + s, k * cin, 1, cin);
                                  }
                              }
                          }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Gradient utilities

std::pair<double, GradientMap> value_and_grad(const ScalarGraph& f, const ParameterStore& store) {
    Tape tape;
    Var loss = f(tape, store);
    const double v = loss.scalar();
    if (!std::isfinite(v)) throw NumericError("non-finite loss " + csv::format_double(v));
    tape.backward(loss);
    auto grads = tape.gradients();
    for (const auto& name : store.names()) {
        if (!grads.count(name)) grads.emplace(name, Matrix::Zero(store.value(name).rows(), store.value(name).cols()));
    }
    return {v, std::move(grads)};
}

GradCheckResult grad_check(const ScalarGraph& f, const ParameterStore& store, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ArgumentError("grad_check: eps must lie in [1e-7, 1e-3]");
    auto [_, analytic] = value_and_grad(f, store);
    auto eval = [&f](const ParameterStore& s) {
        Tape tape(false);
        const double v = f(tape, s).scalar();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss " + csv::format_double(v));
        return v;
    };
    GradCheckResult res;
    ParameterStore probe = store;
    for (const auto& name : store.names()) {
        Matrix& p = probe.value(name);
        const Matrix& ga = analytic.at(name);
        for (Index i = 0; i < p.size(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + eps;
            const double up = eval(probe);
            p.data()[i] = orig - eps;
            const double down = eval(probe);
            p.data()[i] = orig;
            const double fd = (up - down) / (2.0 * eps);
            const double ad = ga.data()[i];
            const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
            if (err > res.max_rel_error || res.worst_index < 0) {
                if (err >= res.max_rel_error) {
                    res.max_rel_error = err;
                    res.worst_parameter = name;
                    res.worst_index = i;
                    res.analytic = ad;
                    res.numeric = fd;
                }
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kCheckpointMagic = "agripinn-checkpoint v1";
}

std::string checkpoint_text(const ParameterStore& store) {
    std::ostringstream out;
    out << kCheckpointMagic << '\n';
    out << "step " << store.step << '\n';
    out << "params " << store.size() << '\n';
    for (const auto& name : store.names()) {
        const auto& m = store.value(name);
        out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
        for (Index r = 0; r < m.rows(); ++r) {
            for (Index c = 0; c < m.cols(); ++c) {
                if (c) out << ' ';
                out << csv::format_double(m(r, c));
            }
            out << '\n';
        }
    }
    return out.str();
}

void save_checkpoint(const std::string& path, const ParameterStore& store) {
    csv::write_atomic(path, checkpoint_text(store));
}

ParameterStore load_checkpoint(const std::string& path) {
    std::istringstream in(csv::read_text(path));
    std::string line;
    std::getline(in, line);
    if (line != kCheckpointMagic) throw SchemaError(1, "header", "not an agripinn checkpoint (got '" + line + "')");
    ParameterStore store;
    std::string word;
    std::size_t count = 0;
    in >> word >> store.step;
    if (word != "step") throw SchemaError(2, "step", "expected 'step'");
    in >> word >> count;
    if (word != "params") throw SchemaError(3, "params", "expected 'params'");
    for (std::size_t i = 0; i < count; ++i) {
        std::string name;
        Index rows = 0, cols = 0;
        if (!(in >> name >> rows >> cols)) throw SchemaError(4 + i, "header", "truncated parameter header");
        Matrix m(rows, cols);
        for (Index k = 0; k < m.size(); ++k) {
            std::string tok;
            if (!(in >> tok)) throw SchemaError(4 + i, name, "truncated parameter values");
            double v = 0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw SchemaError(4 + i, name, "bad value '" + tok + "'");
            m.data()[k] = v;
        }
        store.add(name, std::move(m));
    }
    return store;
}

}  // namespace agripinn::ad
