#pragma once

// Define-by-run reverse-mode differentiation over small dense matrices.
//
// Every operation appends a node to a Tape. Tape::grad walks the nodes in
// reverse creation order and expresses each backward rule with ordinary tape
// operations, so the gradients it returns are themselves differentiable.
// Differentiating a gradient a second time gives exact second-order products
// (reverse-over-reverse), which is how hvp() in objective.hpp works.
//
// Values are row-major; by convention rows index batch elements.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ftncfm/common/errors.hpp"

namespace ftncfm::diff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const;
    bool needs_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    MatMul,
    Transpose,
    Tanh,
    Exp,
    Sin,
    Cos,
    Pow,
    MaskMul,
    Sum,
    BroadcastScalar,
    SumRows,
    BroadcastRows,
    SumCols,
    BroadcastCols,
    ConcatCols,
    SliceCols,
    PadCols,
    SliceRows,
    PadRows,
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) { return push(Op::Leaf, std::move(value), {}, false); }
    Var variable(Matrix value) { return push(Op::Leaf, std::move(value), {}, true); }
    Var scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

    std::size_t size() const noexcept { return nodes_.size(); }

    // Gradients of the 1x1 node `y` with respect to each node in `wrt`.
    // Nodes that `y` does not depend on get a zero gradient of matching shape.
    std::vector<Var> grad(const Var& y, std::span<const Var> wrt);

private:
    friend class Var;

    struct Node {
        Matrix value;
        Matrix aux; // MaskMul mask
        std::size_t parents[2] = {0, 0};
        std::uint8_t arity = 0;
        Op op = Op::Leaf;
        bool needs_grad = false;
        double param = 0.0;
        Index i0 = 0; // offsets / sizes used by shape ops
        Index i1 = 0;
    };

public:
    // Appends an operation node. Used by the op builders below.
    Var record(Op op, Matrix value, std::initializer_list<Var> parents, double param = 0.0, Index i0 = 0,
               Index i1 = 0, Matrix aux = {}) {
        return push(op, std::move(value), parents, false, param, i0, i1, std::move(aux));
    }

private:
    Var push(Op op, Matrix value, std::initializer_list<Var> parents, bool leaf_needs_grad,
             double param = 0.0, Index i0 = 0, Index i1 = 0, Matrix aux = {}) {
        Node n;
        n.value = std::move(value);
        n.aux = std::move(aux);
        n.op = op;
        n.param = param;
        n.i0 = i0;
        n.i1 = i1;
        n.needs_grad = leaf_needs_grad;
        for (const Var& p : parents) {
            require(p.tape_ == this, "tape: operand belongs to a different tape");
            n.parents[n.arity++] = p.id_;
            n.needs_grad = n.needs_grad || nodes_[p.id_].needs_grad;
        }
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    void backprop(std::size_t id, std::vector<Var>& grads);

    std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->nodes_[id_].value; }
inline bool Var::needs_grad() const { return tape_->nodes_[id_].needs_grad; }
inline double Var::scalar() const {
    require(rows() == 1 && cols() == 1, "Var::scalar on a non-scalar node");
    return value()(0, 0);
}

inline Var make_node(Tape& t, Op op, Matrix value, std::initializer_list<Var> parents,
                     double param = 0.0, Index i0 = 0, Index i1 = 0, Matrix aux = {}) {
    return t.record(op, std::move(value), parents, param, i0, i1, std::move(aux));
}

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ContractViolation(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
    }
}
} // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    detail::same_shape(a, b, "add");
    return make_node(a.tape(), Op::Add, a.value() + b.value(), {a, b});
}

inline Var sub(const Var& a, const Var& b) {
    detail::same_shape(a, b, "sub");
    return make_node(a.tape(), Op::Sub, a.value() - b.value(), {a, b});
}

inline Var mul(const Var& a, const Var& b) {
    detail::same_shape(a, b, "mul");
    return make_node(a.tape(), Op::Mul, a.value().cwiseProduct(b.value()), {a, b});
}

inline Var scale(const Var& a, double c) { return make_node(a.tape(), Op::Scale, a.value() * c, {a}, c); }

inline Var add_scalar(const Var& a, double c) {
    return make_node(a.tape(), Op::AddScalar, (a.value().array() + c).matrix(), {a}, c);
}

inline Var tanh(const Var& a) { return make_node(a.tape(), Op::Tanh, a.value().array().tanh().matrix(), {a}); }
inline Var exp(const Var& a) { return make_node(a.tape(), Op::Exp, a.value().array().exp().matrix(), {a}); }
inline Var sin(const Var& a) { return make_node(a.tape(), Op::Sin, a.value().array().sin().matrix(), {a}); }
inline Var cos(const Var& a) { return make_node(a.tape(), Op::Cos, a.value().array().cos().matrix(), {a}); }

inline Var pow(const Var& a, double p) {
    return make_node(a.tape(), Op::Pow, a.value().array().pow(p).matrix(), {a}, p);
}

inline Var square(const Var& a) { return mul(a, a); }

// Elementwise product with a constant mask; the mask receives no gradient.
inline Var mask_mul(const Var& a, Matrix mask) {
    require(mask.rows() == a.rows() && mask.cols() == a.cols(), "mask_mul: shape mismatch");
    Matrix v = a.value().cwiseProduct(mask);
    return make_node(a.tape(), Op::MaskMul, std::move(v), {a}, 0.0, 0, 0, std::move(mask));
}

inline Var leaky_relu(const Var& a, double slope) {
    Matrix mask = a.value().unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    return mask_mul(a, std::move(mask));
}

// ---- linear algebra --------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows()) {
        throw ContractViolation("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
    }
    Matrix v = a.value() * b.value();
    return make_node(a.tape(), Op::MatMul, std::move(v), {a, b});
}

inline Var transpose(const Var& a) {
    Matrix v = a.value().transpose();
    return make_node(a.tape(), Op::Transpose, std::move(v), {a});
}

// ---- reductions and broadcasts ---------------------------------------------

inline Var sum(const Var& a) { return make_node(a.tape(), Op::Sum, Matrix::Constant(1, 1, a.value().sum()), {a}); }

inline Var broadcast_scalar(const Var& a, Index rows, Index cols) {
    require(a.rows() == 1 && a.cols() == 1, "broadcast_scalar: operand must be 1x1");
    return make_node(a.tape(), Op::BroadcastScalar, Matrix::Constant(rows, cols, a.value()(0, 0)), {a}, 0.0, rows,
                     cols);
}

// n x m -> 1 x m
inline Var sum_rows(const Var& a) {
    Matrix v = a.value().colwise().sum();
    return make_node(a.tape(), Op::SumRows, std::move(v), {a});
}

// 1 x m -> n x m
inline Var broadcast_rows(const Var& a, Index n) {
    require(a.rows() == 1, "broadcast_rows: operand must be a row vector");
    Matrix v = a.value().replicate(n, 1);
    return make_node(a.tape(), Op::BroadcastRows, std::move(v), {a}, 0.0, n);
}

// n x m -> n x 1
inline Var sum_cols(const Var& a) {
    Matrix v = a.value().rowwise().sum();
    return make_node(a.tape(), Op::SumCols, std::move(v), {a});
}

// n x 1 -> n x m
inline Var broadcast_cols(const Var& a, Index m) {
    require(a.cols() == 1, "broadcast_cols: operand must be a column vector");
    Matrix v = a.value().replicate(1, m);
    return make_node(a.tape(), Op::BroadcastCols, std::move(v), {a}, 0.0, m);
}

// ---- slicing ---------------------------------------------------------------

inline Var concat_cols(const Var& a, const Var& b) {
    require(a.rows() == b.rows(), "concat_cols: row counts differ");
    Matrix v(a.rows(), a.cols() + b.cols());
    v << a.value(), b.value();
    return make_node(a.tape(), Op::ConcatCols, std::move(v), {a, b});
}

inline Var slice_cols(const Var& a, Index offset, Index width) {
    require(offset >= 0 && width >= 0 && offset + width <= a.cols(), "slice_cols: out of range");
    Matrix v = a.value().middleCols(offset, width);
    return make_node(a.tape(), Op::SliceCols, std::move(v), {a}, 0.0, offset, width);
}

// Places `a` at column `offset` of a zero matrix with `total` columns.
inline Var pad_cols(const Var& a, Index total, Index offset) {
    require(offset >= 0 && offset + a.cols() <= total, "pad_cols: out of range");
    Matrix v = Matrix::Zero(a.rows(), total);
    v.middleCols(offset, a.cols()) = a.value();
    return make_node(a.tape(), Op::PadCols, std::move(v), {a}, 0.0, offset, total);
}

inline Var slice_rows(const Var& a, Index offset, Index height) {
    require(offset >= 0 && height >= 0 && offset + height <= a.rows(), "slice_rows: out of range");
    Matrix v = a.value().middleRows(offset, height);
    return make_node(a.tape(), Op::SliceRows, std::move(v), {a}, 0.0, offset, height);
}

inline Var pad_rows(const Var& a, Index total, Index offset) {
    require(offset >= 0 && offset + a.rows() <= total, "pad_rows: out of range");
    Matrix v = Matrix::Zero(total, a.cols());
    v.middleRows(offset, a.rows()) = a.value();
    return make_node(a.tape(), Op::PadRows, std::move(v), {a}, 0.0, offset, total);
}

// ---- composites ------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.rows() * a.cols())); }

inline Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

// x (n x m) + bias (1 x m)
inline Var add_row(const Var& x, const Var& row) { return add(x, broadcast_rows(row, x.rows())); }

// x (n x m) * col (n x 1), row-wise scaling
inline Var mul_col(const Var& x, const Var& col) { return mul(x, broadcast_cols(col, x.cols())); }

inline Var sigmoid(const Var& a) { return add_scalar(scale(tanh(scale(a, 0.5)), 0.5), 0.5); }

// Row-wise softmax. The row maxima are subtracted as constants, which leaves
// the derivative unchanged.
inline Var softmax_rows(const Var& a) {
    Matrix shift = a.value().rowwise().maxCoeff().replicate(1, a.cols());
    Var e = exp(sub(a, a.tape().constant(std::move(shift))));
    return mul_col(e, pow(sum_cols(e), -1.0));
}

// ---- backward --------------------------------------------------------------

inline void Tape::backprop(std::size_t id, std::vector<Var>& grads) {
    // Copy what we need: creating nodes below may grow the deque.
    const Op op = nodes_[id].op;
    const std::uint8_t arity = nodes_[id].arity;
    const std::size_t pa = nodes_[id].parents[0];
    const std::size_t pb = nodes_[id].parents[1];
    const double param = nodes_[id].param;
    const Index i0 = nodes_[id].i0;
    const Index i1 = nodes_[id].i1;
    const Var g = grads[id];
    const Var self(this, id);
    const Var a(this, pa);
    const Var b(this, pb);

    auto wants = [&](std::size_t k) { return k < arity && nodes_[k == 0 ? pa : pb].needs_grad; };
    auto accumulate = [&](std::size_t parent, const Var& contrib) {
        Var& slot = grads[parent];
        slot = slot.valid() ? add(slot, contrib) : contrib;
    };

    switch (op) {
    case Op::Leaf:
        return;
    case Op::Add:
        if (wants(0)) accumulate(pa, g);
        if (wants(1)) accumulate(pb, g);
        return;
    case Op::Sub:
        if (wants(0)) accumulate(pa, g);
        if (wants(1)) accumulate(pb, scale(g, -1.0));
        return;
    case Op::Mul:
        if (wants(0)) accumulate(pa, mul(g, b));
        if (wants(1)) accumulate(pb, mul(g, a));
        return;
    case Op::Scale:
        if (wants(0)) accumulate(pa, scale(g, param));
        return;
    case Op::AddScalar:
        if (wants(0)) accumulate(pa, g);
        return;
    case Op::MatMul:
        if (wants(0)) accumulate(pa, matmul(g, transpose(b)));
        if (wants(1)) accumulate(pb, matmul(transpose(a), g));
        return;
    case Op::Transpose:
        if (wants(0)) accumulate(pa, transpose(g));
        return;
    case Op::Tanh:
        // d tanh = 1 - y^2, written in terms of the output node
        if (wants(0)) accumulate(pa, mul(g, add_scalar(scale(square(self), -1.0), 1.0)));
        return;
    case Op::Exp:
        if (wants(0)) accumulate(pa, mul(g, self));
        return;
    case Op::Sin:
        if (wants(0)) accumulate(pa, mul(g, cos(a)));
        return;
    case Op::Cos:
        if (wants(0)) accumulate(pa, scale(mul(g, sin(a)), -1.0));
        return;
    case Op::Pow:
        if (wants(0)) accumulate(pa, mul(g, scale(pow(a, param - 1.0), param)));
        return;
    case Op::MaskMul:
        if (wants(0)) accumulate(pa, mask_mul(g, nodes_[id].aux));
        return;
    case Op::Sum:
        if (wants(0)) accumulate(pa, broadcast_scalar(g, a.rows(), a.cols()));
        return;
    case Op::BroadcastScalar:
        if (wants(0)) accumulate(pa, sum(g));
        return;
    case Op::SumRows:
        if (wants(0)) accumulate(pa, broadcast_rows(g, a.rows()));
        return;
    case Op::BroadcastRows:
        if (wants(0)) accumulate(pa, sum_rows(g));
        return;
    case Op::SumCols:
        if (wants(0)) accumulate(pa, broadcast_cols(g, a.cols()));
        return;
    case Op::BroadcastCols:
        if (wants(0)) accumulate(pa, sum_cols(g));
        return;
    case Op::ConcatCols: {
        const Index wa = a.cols();
        if (wants(0)) accumulate(pa, slice_cols(g, 0, wa));
        if (wants(1)) accumulate(pb, slice_cols(g, wa, b.cols()));
        return;
    }
    case Op::SliceCols:
        if (wants(0)) accumulate(pa, pad_cols(g, a.cols(), i0));
        return;
    case Op::PadCols:
        if (wants(0)) accumulate(pa, slice_cols(g, i0, a.cols()));
        return;
    case Op::SliceRows:
        if (wants(0)) accumulate(pa, pad_rows(g, a.rows(), i0));
        return;
    case Op::PadRows:
        if (wants(0)) accumulate(pa, slice_rows(g, i0, a.rows()));
        return;
    }
    (void)i1;
}

inline std::vector<Var> Tape::grad(const Var& y, std::span<const Var> wrt) {
    require(y.tape_ == this, "grad: output belongs to a different tape");
    require(y.rows() == 1 && y.cols() == 1, "grad: output must be a scalar node");

    const std::size_t top = y.id_;
    std::vector<Var> grads(top + 1);
    grads[top] = scalar_constant(1.0);
    for (std::size_t i = top + 1; i-- > 0;) {
        if (!grads[i].valid() || !nodes_[i].needs_grad || nodes_[i].arity == 0) continue;
        backprop(i, grads);
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& w : wrt) {
        require(w.tape_ == this, "grad: input belongs to a different tape");
        if (w.id_ <= top && grads[w.id_].valid()) {
            out.push_back(grads[w.id_]);
        } else {
            out.push_back(constant(Matrix::Zero(w.rows(), w.cols())));
        }
    }
    return out;
}

} // namespace ftncfm::diff
