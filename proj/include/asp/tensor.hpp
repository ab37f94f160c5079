// Dense row-major 64-bit tensors with reverse-mode automatic differentiation.
//
// The tape is define-by-run: every differentiable op appends one node in
// execution order, so the node list is topologically sorted by construction
// and backward() is a single reverse sweep. Tape reuse policy: backward()
// may be called any number of times (each call re-zeroes all gradients and
// recomputes them); clear() or a fresh Tape starts a new recording. Training
// code uses one Tape per optimization step.
//
// Every forward op verifies its output is finite; NaN/Inf raises
// ErrorCode::numeric_error instead of propagating silently.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "asp/error.hpp"
#include "asp/rng.hpp"

namespace asp {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t shape_count(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace detail

class Tape;

class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<double>>()) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(detail::shape_count(shape_), 0.0)) {
        validate_shape();
    }

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(values))) {
        validate_shape();
        if (data_->size() != detail::shape_count(shape_))
            fail(ErrorCode::dimension_mismatch,
                 "Tensor: " + std::to_string(data_->size()) + " values for shape " +
                     detail::shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

    static Tensor row(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor(Shape{n}, std::move(v));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        return Tensor(Shape{r, c}, std::move(v));
    }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.values().begin(), t.values().end(), v);
        return t;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor identity(std::size_t n) {
        Tensor t(Shape{n, n});
        for (std::size_t i = 0; i < n; ++i) t.values()[i * n + i] = 1.0;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_->size(); }

    std::size_t rows() const {
        if (rank() != 2) fail(ErrorCode::contract_violation, "Tensor::rows: rank-2 required");
        return shape_[0];
    }
    std::size_t cols() const {
        if (rank() != 2) fail(ErrorCode::contract_violation, "Tensor::cols: rank-2 required");
        return shape_[1];
    }

    double item() const {
        if (size() != 1) fail(ErrorCode::contract_violation, "Tensor::item: size-1 tensor required");
        return (*data_)[0];
    }

    double at(std::size_t i) const { return (*data_)[i]; }
    double at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_[1] + c]; }
    double& at(std::size_t i) { return (*data_)[i]; }
    double& at(std::size_t r, std::size_t c) { return (*data_)[r * shape_[1] + c]; }

    const std::vector<double>& values() const { return *data_; }
    std::vector<double>& values() { return *data_; }

    // deep copy of the value buffer, off-tape
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<double>>(*data_);
        return t;
    }

    Tape* tape() const { return tape_; }
    int node() const { return node_; }
    bool recorded() const { return tape_ != nullptr; }

    // Internal: shared value buffer and tape attachment. Ops capture
    // buffer() in backward closures so values outlive user handles.
    const std::shared_ptr<std::vector<double>>& buffer() const { return data_; }
    void attach(Tape* tape, int node) {
        tape_ = tape;
        node_ = node;
    }

private:
    void validate_shape() const {
        for (std::size_t d : shape_)
            if (d == 0) fail(ErrorCode::invalid_parameter, "Tensor: zero dimension in shape");
    }

    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

class Tape {
public:
    using BackFn = std::function<void(const std::vector<double>& out_grad, Tape& tape)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf (parameter). The returned handle shares the value
    // buffer of the input, so in-place parameter updates remain visible.
    Tensor watch(const Tensor& t) {
        Tensor leaf = t;
        leaf.attach(this, emit(t.size(), {}, nullptr));
        return leaf;
    }

    int emit(std::size_t count, std::vector<int> parents, BackFn back) {
        nodes_.push_back(Node{count, std::move(parents), std::move(back),
                              std::vector<double>(count, 0.0)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<double>& grad_buf(int node) { return nodes_[static_cast<std::size_t>(node)].grad; }

    void backward(const Tensor& loss) {
        if (loss.tape() != this || loss.node() < 0)
            fail(ErrorCode::contract_violation, "backward: loss is not recorded on this tape");
        if (loss.size() != 1)
            fail(ErrorCode::contract_violation, "backward: loss must be scalar");
        for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
        nodes_[static_cast<std::size_t>(loss.node())].grad[0] = 1.0;
        // nodes after the loss cannot influence it
        for (int i = loss.node(); i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back) n.back(n.grad, *this);
        }
    }

    const std::vector<double>& grad(const Tensor& t) const {
        if (t.tape() != this || t.node() < 0)
            fail(ErrorCode::contract_violation, "grad: tensor is not recorded on this tape");
        return nodes_[static_cast<std::size_t>(t.node())].grad;
    }

    void clear() { nodes_.clear(); }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::size_t count;
        std::vector<int> parents;
        BackFn back;
        std::vector<double> grad;
    };
    std::vector<Node> nodes_;
};

namespace detail {

inline Tape* joint_tape(const Tensor& a, const Tensor& b) {
    Tape* ta = a.tape();
    Tape* tb = b.tape();
    if (ta && tb && ta != tb)
        fail(ErrorCode::contract_violation, "operands are recorded on different tapes");
    return ta ? ta : tb;
}

inline void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v)
        if (!std::isfinite(x))
            fail(ErrorCode::numeric_error, std::string(op) + ": produced a non-finite value");
}

inline std::vector<int> parent_list(std::initializer_list<int> nodes) {
    std::vector<int> out;
    for (int n : nodes)
        if (n >= 0) out.push_back(n);
    return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        fail(ErrorCode::dimension_mismatch, std::string(op) + ": shapes " + shape_str(a.shape()) +
                                                " and " + shape_str(b.shape()) + " differ");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    detail::check_finite(ov, "add");
    if (Tape* tp = detail::joint_tape(a, b)) {
        const int an = a.node(), bn = b.node();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({an, bn}),
                                [an, bn](const std::vector<double>& g, Tape& t) {
                                    if (an >= 0) {
                                        auto& ga = t.grad_buf(an);
                                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                    }
                                    if (bn >= 0) {
                                        auto& gb = t.grad_buf(bn);
                                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                                    }
                                }));
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    detail::check_finite(ov, "sub");
    if (Tape* tp = detail::joint_tape(a, b)) {
        const int an = a.node(), bn = b.node();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({an, bn}),
                                [an, bn](const std::vector<double>& g, Tape& t) {
                                    if (an >= 0) {
                                        auto& ga = t.grad_buf(an);
                                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                    }
                                    if (bn >= 0) {
                                        auto& gb = t.grad_buf(bn);
                                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                    }
                                }));
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    detail::check_finite(ov, "mul");
    if (Tape* tp = detail::joint_tape(a, b)) {
        const int an = a.node(), bn = b.node();
        auto abuf = a.buffer();
        auto bbuf = b.buffer();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({an, bn}),
                                [an, bn, abuf, bbuf](const std::vector<double>& g, Tape& t) {
                                    if (an >= 0) {
                                        auto& ga = t.grad_buf(an);
                                        for (std::size_t i = 0; i < g.size(); ++i)
                                            ga[i] += g[i] * (*bbuf)[i];
                                    }
                                    if (bn >= 0) {
                                        auto& gb = t.grad_buf(bn);
                                        for (std::size_t i = 0; i < g.size(); ++i)
                                            gb[i] += g[i] * (*abuf)[i];
                                    }
                                }));
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    detail::check_finite(ov, "scale");
    if (Tape* tp = a.tape()) {
        const int an = a.node();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({an}),
                                [an, c](const std::vector<double>& g, Tape& t) {
                                    auto& ga = t.grad_buf(an);
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
                                }));
    }
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
    if (Tape* tp = a.tape()) {
        const int an = a.node();
        auto abuf = a.buffer();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({an}),
                                [an, abuf](const std::vector<double>& g, Tape& t) {
                                    auto& ga = t.grad_buf(an);
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                        if ((*abuf)[i] > 0.0) ga[i] += g[i];
                                }));
    }
    return out;
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    if (!std::isfinite(s)) fail(ErrorCode::numeric_error, "sum: produced a non-finite value");
    Tensor out = Tensor::scalar(s);
    if (Tape* tp = a.tape()) {
        const int an = a.node();
        const std::size_t n = a.size();
        out.attach(tp, tp->emit(1, detail::parent_list({an}),
                                [an, n](const std::vector<double>& g, Tape& t) {
                                    auto& ga = t.grad_buf(an);
                                    for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                                }));
    }
    return out;
}

// broadcast add of a length-n vector to every row of an r-by-n matrix
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (x.rank() != 2 || v.rank() != 1 || v.shape()[0] != x.shape()[1])
        fail(ErrorCode::dimension_mismatch, "add_rowvec: need [r x n] and [n], got " +
                                                detail::shape_str(x.shape()) + " and " +
                                                detail::shape_str(v.shape()));
    const std::size_t r = x.shape()[0], n = x.shape()[1];
    Tensor out(x.shape());
    const auto& xv = x.values();
    const auto& vv = v.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + vv[j];
    detail::check_finite(ov, "add_rowvec");
    if (Tape* tp = detail::joint_tape(x, v)) {
        const int xn = x.node(), vn = v.node();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({xn, vn}),
                                [xn, vn, r, n](const std::vector<double>& g, Tape& t) {
                                    if (xn >= 0) {
                                        auto& gx = t.grad_buf(xn);
                                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                    }
                                    if (vn >= 0) {
                                        auto& gv = t.grad_buf(vn);
                                        for (std::size_t i = 0; i < r; ++i)
                                            for (std::size_t j = 0; j < n; ++j)
                                                gv[j] += g[i * n + j];
                                    }
                                }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// matrix ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        fail(ErrorCode::dimension_mismatch, "matmul: rank-2 operands required");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        fail(ErrorCode::dimension_mismatch, "matmul: inner dimensions disagree, " +
                                                detail::shape_str(a.shape()) + " x " +
                                                detail::shape_str(b.shape()));
    Tensor out(Shape{m, n});
    {
        const double* A = a.values().data();
        const double* B = b.values().data();
        double* C = out.values().data();
        for (std::size_t i = 0; i < m; ++i) {
            double* Ci = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                const double* Bp = B + p * n;
                for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
            }
        }
    }
    detail::check_finite(out.values(), "matmul");
    if (Tape* tp = detail::joint_tape(a, b)) {
        const int an = a.node(), bn = b.node();
        auto abuf = a.buffer();
        auto bbuf = b.buffer();
        out.attach(tp, tp->emit(m * n, detail::parent_list({an, bn}),
                                [an, bn, abuf, bbuf, m, k, n](const std::vector<double>& g, Tape& t) {
                                    const double* G = g.data();
                                    if (an >= 0) {  // dA = G B^T
                                        auto& ga = t.grad_buf(an);
                                        const double* B = bbuf->data();
                                        for (std::size_t i = 0; i < m; ++i)
                                            for (std::size_t p = 0; p < k; ++p) {
                                                const double* Gi = G + i * n;
                                                const double* Bp = B + p * n;
                                                double s = 0.0;
                                                for (std::size_t j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                                                ga[i * k + p] += s;
                                            }
                                    }
                                    if (bn >= 0) {  // dB = A^T G
                                        auto& gb = t.grad_buf(bn);
                                        const double* A = abuf->data();
                                        for (std::size_t i = 0; i < m; ++i)
                                            for (std::size_t p = 0; p < k; ++p) {
                                                const double aip = A[i * k + p];
                                                if (aip == 0.0) continue;
                                                const double* Gi = G + i * n;
                                                double* gbp = gb.data() + p * n;
                                                for (std::size_t j = 0; j < n; ++j)
                                                    gbp[j] += aip * Gi[j];
                                            }
                                    }
                                }));
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) fail(ErrorCode::dimension_mismatch, "transpose: rank-2 operand required");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out(Shape{c, r});
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = av[i * c + j];
    if (Tape* tp = a.tape()) {
        const int an = a.node();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({an}),
                                [an, r, c](const std::vector<double>& g, Tape& t) {
                                    auto& ga = t.grad_buf(an);
                                    for (std::size_t i = 0; i < r; ++i)
                                        for (std::size_t j = 0; j < c; ++j)
                                            ga[i * c + j] += g[j * r + i];
                                }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// row layout ops

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
        fail(ErrorCode::dimension_mismatch, "concat_rows: column counts differ");
    const std::size_t ra = a.shape()[0], rb = b.shape()[0], c = a.shape()[1];
    Tensor out(Shape{ra + rb, c});
    auto& ov = out.values();
    std::copy(a.values().begin(), a.values().end(), ov.begin());
    std::copy(b.values().begin(), b.values().end(), ov.begin() + static_cast<std::ptrdiff_t>(ra * c));
    if (Tape* tp = detail::joint_tape(a, b)) {
        const int an = a.node(), bn = b.node();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({an, bn}),
                                [an, bn, ra, rb, c](const std::vector<double>& g, Tape& t) {
                                    if (an >= 0) {
                                        auto& ga = t.grad_buf(an);
                                        for (std::size_t i = 0; i < ra * c; ++i) ga[i] += g[i];
                                    }
                                    if (bn >= 0) {
                                        auto& gb = t.grad_buf(bn);
                                        for (std::size_t i = 0; i < rb * c; ++i)
                                            gb[i] += g[ra * c + i];
                                    }
                                }));
    }
    return out;
}

inline Tensor slice_rows(const Tensor& x, std::size_t first, std::size_t count) {
    if (x.rank() != 2) fail(ErrorCode::dimension_mismatch, "slice_rows: rank-2 operand required");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (count == 0 || first + count > r)
        fail(ErrorCode::index_out_of_range, "slice_rows: rows [" + std::to_string(first) + ", " +
                                                std::to_string(first + count) + ") out of " +
                                                std::to_string(r));
    Tensor out(Shape{count, c});
    std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(first * c),
              x.values().begin() + static_cast<std::ptrdiff_t>((first + count) * c),
              out.values().begin());
    if (Tape* tp = x.tape()) {
        const int xn = x.node();
        out.attach(tp, tp->emit(count * c, detail::parent_list({xn}),
                                [xn, first, count, c](const std::vector<double>& g, Tape& t) {
                                    auto& gx = t.grad_buf(xn);
                                    for (std::size_t i = 0; i < count * c; ++i)
                                        gx[first * c + i] += g[i];
                                }));
    }
    return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t first, std::size_t count) {
    if (x.rank() != 2) fail(ErrorCode::dimension_mismatch, "slice_cols: rank-2 operand required");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (count == 0 || first + count > c)
        fail(ErrorCode::index_out_of_range, "slice_cols: cols [" + std::to_string(first) + ", " +
                                                std::to_string(first + count) + ") out of " +
                                                std::to_string(c));
    Tensor out(Shape{r, count});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) ov[i * count + j] = xv[i * c + first + j];
    if (Tape* tp = x.tape()) {
        const int xn = x.node();
        out.attach(tp, tp->emit(r * count, detail::parent_list({xn}),
                                [xn, r, c, first, count](const std::vector<double>& g, Tape& t) {
                                    auto& gx = t.grad_buf(xn);
                                    for (std::size_t i = 0; i < r; ++i)
                                        for (std::size_t j = 0; j < count; ++j)
                                            gx[i * c + first + j] += g[i * count + j];
                                }));
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail(ErrorCode::invalid_parameter, "concat_cols: no operands");
    const std::size_t r = parts[0].rows();
    std::size_t total = 0;
    Tape* tp = nullptr;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.shape()[0] != r)
            fail(ErrorCode::dimension_mismatch, "concat_cols: row counts differ");
        total += p.shape()[1];
        if (p.tape()) {
            if (tp && tp != p.tape())
                fail(ErrorCode::contract_violation, "operands are recorded on different tapes");
            tp = p.tape();
        }
    }
    Tensor out(Shape{r, total});
    auto& ov = out.values();
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.shape()[1];
        const auto& pv = p.values();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ov[i * total + off + j] = pv[i * c + j];
        off += c;
    }
    if (tp) {
        struct Piece {
            int node;
            std::size_t offset, cols;
        };
        std::vector<Piece> pieces;
        std::vector<int> parents;
        std::size_t o = 0;
        for (const auto& p : parts) {
            if (p.node() >= 0) {
                pieces.push_back({p.node(), o, p.shape()[1]});
                parents.push_back(p.node());
            }
            o += p.shape()[1];
        }
        out.attach(tp, tp->emit(r * total, std::move(parents),
                                [pieces, r, total](const std::vector<double>& g, Tape& t) {
                                    for (const auto& piece : pieces) {
                                        auto& gp = t.grad_buf(piece.node);
                                        for (std::size_t i = 0; i < r; ++i)
                                            for (std::size_t j = 0; j < piece.cols; ++j)
                                                gp[i * piece.cols + j] +=
                                                    g[i * total + piece.offset + j];
                                    }
                                }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// nonlinear ops

// softmax along `axis` (-1 = last). Subtract-max stabilization throughout.
inline Tensor softmax(const Tensor& x, int axis = -1) {
    if (x.rank() == 0 || x.rank() > 2)
        fail(ErrorCode::dimension_mismatch, "softmax: rank-1 or rank-2 operand required");
    const int r = static_cast<int>(x.rank());
    int ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) fail(ErrorCode::invalid_parameter, "softmax: bad axis");

    // view the tensor as `lanes` independent vectors of length `n`
    std::size_t lanes, n, lane_stride, elem_stride;
    if (x.rank() == 1) {
        lanes = 1;
        n = x.shape()[0];
        lane_stride = 0;
        elem_stride = 1;
    } else if (ax == 1) {  // along rows
        lanes = x.shape()[0];
        n = x.shape()[1];
        lane_stride = n;
        elem_stride = 1;
    } else {  // along columns
        lanes = x.shape()[1];
        n = x.shape()[0];
        lane_stride = 1;
        elem_stride = x.shape()[1];
    }

    Tensor out(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t base = l * lane_stride;
        double mx = xv[base];
        for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xv[base + i * elem_stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = std::exp(xv[base + i * elem_stride] - mx);
            ov[base + i * elem_stride] = e;
            z += e;
        }
        for (std::size_t i = 0; i < n; ++i) ov[base + i * elem_stride] /= z;
    }
    detail::check_finite(ov, "softmax");
    if (Tape* tp = x.tape()) {
        const int xn = x.node();
        auto ybuf = out.buffer();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({xn}),
                                [xn, ybuf, lanes, n, lane_stride, elem_stride](
                                    const std::vector<double>& g, Tape& t) {
                                    auto& gx = t.grad_buf(xn);
                                    const auto& y = *ybuf;
                                    for (std::size_t l = 0; l < lanes; ++l) {
                                        const std::size_t base = l * lane_stride;
                                        double dot = 0.0;
                                        for (std::size_t i = 0; i < n; ++i) {
                                            const std::size_t k = base + i * elem_stride;
                                            dot += g[k] * y[k];
                                        }
                                        for (std::size_t i = 0; i < n; ++i) {
                                            const std::size_t k = base + i * elem_stride;
                                            gx[k] += y[k] * (g[k] - dot);
                                        }
                                    }
                                }));
    }
    return out;
}

// per-row zero mean / unit variance (biased variance) followed by affine
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    if (x.rank() == 0 || x.rank() > 2)
        fail(ErrorCode::dimension_mismatch, "layer_norm: rank-1 or rank-2 operand required");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    if (gain.rank() != 1 || gain.shape()[0] != d || bias.rank() != 1 || bias.shape()[0] != d)
        fail(ErrorCode::dimension_mismatch, "layer_norm: gain/bias must be length-" +
                                                std::to_string(d) + " vectors");

    Tensor out(x.shape());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_sigma = std::make_shared<std::vector<double>>(rows);
    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xi = xv.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xi[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (xi[j] - mean) * is;
            (*xhat)[i * d + j] = xh;
            ov[i * d + j] = gv[j] * xh + bv[j];
        }
    }
    detail::check_finite(ov, "layer_norm");
    Tape* tp = detail::joint_tape(x, gain);
    if (Tape* tb = bias.tape()) {
        if (tp && tp != tb)
            fail(ErrorCode::contract_violation, "operands are recorded on different tapes");
        tp = tp ? tp : tb;
    }
    if (tp) {
        const int xn = x.node(), gn = gain.node(), bn = bias.node();
        auto gbuf = gain.buffer();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({xn, gn, bn}),
                                [xn, gn, bn, gbuf, xhat, inv_sigma, rows, d](
                                    const std::vector<double>& g, Tape& t) {
                                    const auto& gv2 = *gbuf;
                                    for (std::size_t i = 0; i < rows; ++i) {
                                        const double* gi = g.data() + i * d;
                                        const double* xh = xhat->data() + i * d;
                                        if (gn >= 0) {
                                            auto& gg = t.grad_buf(gn);
                                            for (std::size_t j = 0; j < d; ++j)
                                                gg[j] += gi[j] * xh[j];
                                        }
                                        if (bn >= 0) {
                                            auto& gb = t.grad_buf(bn);
                                            for (std::size_t j = 0; j < d; ++j) gb[j] += gi[j];
                                        }
                                        if (xn >= 0) {
                                            auto& gx = t.grad_buf(xn);
                                            double mean_q = 0.0, mean_qx = 0.0;
                                            for (std::size_t j = 0; j < d; ++j) {
                                                const double q = gi[j] * gv2[j];
                                                mean_q += q;
                                                mean_qx += q * xh[j];
                                            }
                                            mean_q /= static_cast<double>(d);
                                            mean_qx /= static_cast<double>(d);
                                            const double is = (*inv_sigma)[i];
                                            for (std::size_t j = 0; j < d; ++j) {
                                                const double q = gi[j] * gv2[j];
                                                gx[i * d + j] +=
                                                    (q - mean_q - xh[j] * mean_qx) * is;
                                            }
                                        }
                                    }
                                }));
    }
    return out;
}

// Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is an exact
// identity (the input tensor is returned unchanged).
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0))
        fail(ErrorCode::invalid_parameter, "dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    for (auto& m : *mask) m = rng.uniform() < p ? 0.0 : keep_scale;
    Tensor out(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * (*mask)[i];
    detail::check_finite(ov, "dropout");
    if (Tape* tp = x.tape()) {
        const int xn = x.node();
        out.attach(tp, tp->emit(ov.size(), detail::parent_list({xn}),
                                [xn, mask](const std::vector<double>& g, Tape& t) {
                                    auto& gx = t.grad_buf(xn);
                                    for (std::size_t i = 0; i < g.size(); ++i)
                                        gx[i] += g[i] * (*mask)[i];
                                }));
    }
    return out;
}

// mean over the batch of -log softmax(logits)[target]
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> targets) {
    if (logits.rank() != 2)
        fail(ErrorCode::dimension_mismatch, "cross_entropy: rank-2 logits required");
    const std::size_t b = logits.shape()[0], n = logits.shape()[1];
    if (targets.size() != b)
        fail(ErrorCode::dimension_mismatch, "cross_entropy: batch size and target count differ");
    for (std::size_t i = 0; i < b; ++i)
        if (targets[i] >= n)
            fail(ErrorCode::index_out_of_range, "cross_entropy: target " +
                                                    std::to_string(targets[i]) + " out of " +
                                                    std::to_string(n) + " classes (row " +
                                                    std::to_string(i) + ")");

    auto probs = std::make_shared<std::vector<double>>(b * n);
    const auto& lv = logits.values();
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double* li = lv.data() + i * n;
        double mx = li[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, li[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(li[j] - mx);
            (*probs)[i * n + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] /= z;
        total += (mx + std::log(z)) - li[targets[i]];
    }
    total /= static_cast<double>(b);
    if (!std::isfinite(total))
        fail(ErrorCode::numeric_error, "cross_entropy: produced a non-finite value");
    Tensor out = Tensor::scalar(total);
    if (Tape* tp = logits.tape()) {
        const int ln = logits.node();
        std::vector<std::uint32_t> tgt(targets.begin(), targets.end());
        out.attach(tp, tp->emit(1, detail::parent_list({ln}),
                                [ln, probs, tgt, b, n](const std::vector<double>& g, Tape& t) {
                                    auto& gl = t.grad_buf(ln);
                                    const double s = g[0] / static_cast<double>(b);
                                    for (std::size_t i = 0; i < b; ++i)
                                        for (std::size_t j = 0; j < n; ++j) {
                                            double d = (*probs)[i * n + j];
                                            if (j == tgt[i]) d -= 1.0;
                                            gl[i * n + j] += s * d;
                                        }
                                }));
    }
    return out;
}

// entry (i, j) = cos(a_i, b_j); zero-norm rows are an error, never a silent 0/0
inline Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
        fail(ErrorCode::dimension_mismatch, "cosine_rows: need [m x d] and [n x d], got " +
                                                detail::shape_str(a.shape()) + " and " +
                                                detail::shape_str(b.shape()));
    const std::size_t m = a.shape()[0], n = b.shape()[0], d = a.shape()[1];
    auto norms_of = [d](const Tensor& t, const char* side) {
        auto norms = std::make_shared<std::vector<double>>(t.shape()[0]);
        for (std::size_t i = 0; i < t.shape()[0]; ++i) {
            double s = 0.0;
            const double* row = t.values().data() + i * d;
            for (std::size_t j = 0; j < d; ++j) s += row[j] * row[j];
            s = std::sqrt(s);
            if (s == 0.0)
                fail(ErrorCode::singular_input, std::string("cosine_rows: ") + side + " row " +
                                                    std::to_string(i) + " has zero norm");
            (*norms)[i] = s;
        }
        return norms;
    };
    auto na = norms_of(a, "left");
    auto nb = norms_of(b, "right");
    Tensor out(Shape{m, n});
    auto& ov = out.values();
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            const double* ai = av.data() + i * d;
            const double* bj = bv.data() + j * d;
            for (std::size_t p = 0; p < d; ++p) s += ai[p] * bj[p];
            ov[i * n + j] = s / ((*na)[i] * (*nb)[j]);
        }
    detail::check_finite(ov, "cosine_rows");
    if (Tape* tp = detail::joint_tape(a, b)) {
        const int an = a.node(), bn = b.node();
        auto abuf = a.buffer();
        auto bbuf = b.buffer();
        auto cbuf = out.buffer();
        out.attach(tp, tp->emit(m * n, detail::parent_list({an, bn}),
                                [an, bn, abuf, bbuf, cbuf, na, nb, m, n, d](
                                    const std::vector<double>& g, Tape& t) {
                                    const auto& A = *abuf;
                                    const auto& B = *bbuf;
                                    const auto& C = *cbuf;
                                    if (an >= 0) {
                                        auto& ga = t.grad_buf(an);
                                        for (std::size_t i = 0; i < m; ++i)
                                            for (std::size_t j = 0; j < n; ++j) {
                                                const double gij = g[i * n + j];
                                                if (gij == 0.0) continue;
                                                const double inv = 1.0 / ((*na)[i] * (*nb)[j]);
                                                const double cij = C[i * n + j];
                                                const double inv_na2 =
                                                    1.0 / ((*na)[i] * (*na)[i]);
                                                for (std::size_t p = 0; p < d; ++p)
                                                    ga[i * d + p] +=
                                                        gij * (B[j * d + p] * inv -
                                                               cij * A[i * d + p] * inv_na2);
                                            }
                                    }
                                    if (bn >= 0) {
                                        auto& gb = t.grad_buf(bn);
                                        for (std::size_t i = 0; i < m; ++i)
                                            for (std::size_t j = 0; j < n; ++j) {
                                                const double gij = g[i * n + j];
                                                if (gij == 0.0) continue;
                                                const double inv = 1.0 / ((*na)[i] * (*nb)[j]);
                                                const double cij = C[i * n + j];
                                                const double inv_nb2 =
                                                    1.0 / ((*nb)[j] * (*nb)[j]);
                                                for (std::size_t p = 0; p < d; ++p)
                                                    gb[j * d + p] +=
                                                        gij * (A[i * d + p] * inv -
                                                               cij * B[j * d + p] * inv_nb2);
                                            }
                                    }
                                }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::int64_t step = 0;

    void init(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.emplace_back(p->size(), 0.0);
            v.emplace_back(p->size(), 0.0);
        }
        step = 0;
    }
};

inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<const std::vector<double>*>& grads, AdamState& state,
                      const AdamConfig& cfg = {}) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size())
        fail(ErrorCode::dimension_mismatch, "adam_step: params/grads/state counts differ");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k]->values();
        const auto& g = *grads[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (g.size() != p.size() || m.size() != p.size())
            fail(ErrorCode::dimension_mismatch, "adam_step: shape mismatch at parameter " +
                                                    std::to_string(k));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace asp
