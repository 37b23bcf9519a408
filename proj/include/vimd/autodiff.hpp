#pragma once

// Tape-based reverse-mode differentiation over dense Eigen matrices.
// Every operation allocates a Node holding its value and a closure that
// scatters the incoming gradient to the parents. backward() walks the
// tape in reverse topological order.

#include "vimd/core.hpp"

#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace vimd::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Matrix value;
    Matrix grad;  // empty until first accumulation
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;
    bool requires_grad = false;

    void accumulate(const Matrix& g) {
        if (!requires_grad) return;
        if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
        grad += g;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    const Matrix& value() const { return node_->value; }
    const Matrix& grad() const { return node_->grad; }
    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    bool defined() const { return node_ != nullptr; }
    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

inline Var leaf(Matrix v, bool requires_grad = true) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

inline Var constant(Matrix v) { return leaf(std::move(v), false); }

namespace detail {

inline NodePtr make(Matrix value, std::vector<NodePtr> parents,
                    std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    return Var(detail::make(a.value() + b.value(), {a.node(), b.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad);
        n.parents[1]->accumulate(n.grad);
    }));
}

inline Var sub(const Var& a, const Var& b) {
    require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    return Var(detail::make(a.value() - b.value(), {a.node(), b.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad);
        n.parents[1]->accumulate(-n.grad);
    }));
}

inline Var mul(const Var& a, const Var& b) {
    require_dims(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    return Var(detail::make(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.cwiseProduct(n.parents[1]->value));
        n.parents[1]->accumulate(n.grad.cwiseProduct(n.parents[0]->value));
    }));
}

inline Var scale(const Var& a, double s) {
    return Var(detail::make(a.value() * s, {a.node()},
                            [s](Node& n) { n.parents[0]->accumulate(n.grad * s); }));
}

inline Var add_scalar(const Var& a, double s) {
    return Var(detail::make(a.value().array() + s, {a.node()},
                            [](Node& n) { n.parents[0]->accumulate(n.grad); }));
}

inline Var matmul(const Var& a, const Var& b) {
    require_dims(a.cols() == b.rows(), "matmul: inner dims differ");
    return Var(detail::make(a.value() * b.value(), {a.node(), b.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad * n.parents[1]->value.transpose());
        n.parents[1]->accumulate(n.parents[0]->value.transpose() * n.grad);
    }));
}

inline Var transpose(const Var& a) {
    return Var(detail::make(a.value().transpose(), {a.node()},
                            [](Node& n) { n.parents[0]->accumulate(n.grad.transpose()); }));
}

// ---- elementwise nonlinearities -------------------------------------------

inline Var exp(const Var& a) {
    Matrix y = a.value().array().exp();
    return Var(detail::make(y, {a.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.cwiseProduct(n.value));
    }));
}

inline Var sigmoid(const Var& a) {
    Matrix y = (1.0 / (1.0 + (-a.value().array()).exp()));
    return Var(detail::make(y, {a.node()}, [](Node& n) {
        Matrix d = n.value.array() * (1.0 - n.value.array());
        n.parents[0]->accumulate(n.grad.cwiseProduct(d));
    }));
}

inline Var silu(const Var& a) {
    Eigen::ArrayXXd s = 1.0 / (1.0 + (-a.value().array()).exp());
    Matrix y = a.value().array() * s;
    return Var(detail::make(y, {a.node()}, [s](Node& n) {
        Eigen::ArrayXXd d = s + n.parents[0]->value.array() * s * (1.0 - s);
        n.parents[0]->accumulate((n.grad.array() * d).matrix());
    }));
}

inline Var softplus(const Var& a) {
    Matrix y = a.value().unaryExpr([](double x) {
        return x > 30.0 ? x : std::log1p(std::exp(x));
    });
    return Var(detail::make(y, {a.node()}, [](Node& n) {
        Matrix d = 1.0 / (1.0 + (-n.parents[0]->value.array()).exp());
        n.parents[0]->accumulate(n.grad.cwiseProduct(d));
    }));
}

inline Var relu(const Var& a) {
    return Var(detail::make(a.value().cwiseMax(0.0), {a.node()}, [](Node& n) {
        Matrix d = (n.parents[0]->value.array() > 0.0).cast<double>();
        n.parents[0]->accumulate(n.grad.cwiseProduct(d));
    }));
}

inline Var abs(const Var& a) {
    return Var(detail::make(a.value().cwiseAbs(), {a.node()}, [](Node& n) {
        Matrix d = n.parents[0]->value.array().sign();
        n.parents[0]->accumulate(n.grad.cwiseProduct(d));
    }));
}

inline Var pow_scalar(const Var& a, double p) {
    Matrix y = a.value().array().pow(p);
    return Var(detail::make(y, {a.node()}, [p](Node& n) {
        Matrix d = p * n.parents[0]->value.array().pow(p - 1.0);
        n.parents[0]->accumulate(n.grad.cwiseProduct(d));
    }));
}

// ---- reductions and broadcasts --------------------------------------------

inline Var sum(const Var& a) {
    Matrix y(1, 1);
    y(0, 0) = a.value().sum();
    return Var(detail::make(y, {a.node()}, [](Node& n) {
        n.parents[0]->accumulate(Matrix::Constant(n.parents[0]->value.rows(),
                                                  n.parents[0]->value.cols(), n.grad(0, 0)));
    }));
}

inline Var mean(const Var& a) {
    double inv = 1.0 / static_cast<double>(a.value().size());
    return scale(sum(a), inv);
}

inline Var rows_sum(const Var& a) {  // N x C -> N x 1
    Matrix y = a.value().rowwise().sum();
    return Var(detail::make(y, {a.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad * Eigen::RowVectorXd::Ones(n.parents[0]->value.cols()));
    }));
}

inline Var rows_mean(const Var& a) {
    return scale(rows_sum(a), 1.0 / static_cast<double>(a.cols()));
}

// x: N x C, b: 1 x C, broadcast over rows
inline Var add_rowvec(const Var& x, const Var& b) {
    require_dims(b.rows() == 1 && b.cols() == x.cols(), "add_rowvec: bad bias shape");
    Matrix y = x.value().rowwise() + b.value().row(0);
    return Var(detail::make(y, {x.node(), b.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad);
        n.parents[1]->accumulate(n.grad.colwise().sum());
    }));
}

inline Var mul_rowvec(const Var& x, const Var& w) {
    require_dims(w.rows() == 1 && w.cols() == x.cols(), "mul_rowvec: bad weight shape");
    Matrix y = x.value().array().rowwise() * w.value().row(0).array();
    return Var(detail::make(y, {x.node(), w.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.array().rowwise() * n.parents[1]->value.row(0).array());
        n.parents[1]->accumulate(
            (n.grad.cwiseProduct(n.parents[0]->value)).colwise().sum());
    }));
}

// x: N x C, v: N x 1, broadcast over columns
inline Var mul_colvec(const Var& x, const Var& v) {
    require_dims(v.cols() == 1 && v.rows() == x.rows(), "mul_colvec: bad vector shape");
    Matrix y = x.value().array().colwise() * v.value().col(0).array();
    return Var(detail::make(y, {x.node(), v.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.array().colwise() * n.parents[1]->value.col(0).array());
        n.parents[1]->accumulate(
            (n.grad.cwiseProduct(n.parents[0]->value)).rowwise().sum());
    }));
}

inline Var softmax_rows(const Var& a) {
    Matrix z = a.value();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::RowVectorXd r = z.row(i);
        double m = r.maxCoeff();
        Eigen::RowVectorXd e = (r.array() - m).exp();
        z.row(i) = e / e.sum();
    }
    return Var(detail::make(z, {a.node()}, [](Node& n) {
        const Matrix& y = n.value;
        Matrix dot = (n.grad.cwiseProduct(y)).rowwise().sum();  // N x 1
        Matrix gx = y.cwiseProduct(n.grad - dot * Eigen::RowVectorXd::Ones(y.cols()));
        n.parents[0]->accumulate(gx);
    }));
}

// rowwise dot product of two N x C matrices -> N x 1
inline Var rows_dot(const Var& x, const Var& y) {
    require_dims(x.rows() == y.rows() && x.cols() == y.cols(), "rows_dot: shape mismatch");
    Matrix v = x.value().cwiseProduct(y.value()).rowwise().sum();
    return Var(detail::make(v, {x.node(), y.node()}, [](Node& n) {
        Matrix grep = n.grad * Eigen::RowVectorXd::Ones(n.parents[0]->value.cols());
        n.parents[0]->accumulate(grep.cwiseProduct(n.parents[1]->value));
        n.parents[1]->accumulate(grep.cwiseProduct(n.parents[0]->value));
    }));
}

// ---- shape ops ------------------------------------------------------------

inline Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index n) {
    require_dims(r0 >= 0 && r0 + n <= a.rows(), "slice_rows: out of range");
    Matrix y = a.value().middleRows(r0, n);
    return Var(detail::make(y, {a.node()}, [r0, n](Node& nd) {
        Matrix g = Matrix::Zero(nd.parents[0]->value.rows(), nd.parents[0]->value.cols());
        g.middleRows(r0, n) = nd.grad;
        nd.parents[0]->accumulate(g);
    }));
}

inline Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n) {
    require_dims(c0 >= 0 && c0 + n <= a.cols(), "slice_cols: out of range");
    Matrix y = a.value().middleCols(c0, n);
    return Var(detail::make(y, {a.node()}, [c0, n](Node& nd) {
        Matrix g = Matrix::Zero(nd.parents[0]->value.rows(), nd.parents[0]->value.cols());
        g.middleCols(c0, n) = nd.grad;
        nd.parents[0]->accumulate(g);
    }));
}

inline Var reverse_rows(const Var& a) {
    Matrix y = a.value().colwise().reverse();
    return Var(detail::make(y, {a.node()}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.colwise().reverse());
    }));
}

inline Var vcat(const std::vector<Var>& parts) {
    require(!parts.empty(), "vcat: empty");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0].cols();
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        require_dims(p.cols() == cols, "vcat: column mismatch");
        rows += p.rows();
        nodes.push_back(p.node());
    }
    Matrix y(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        y.middleRows(r, p.rows()) = p.value();
        r += p.rows();
    }
    return Var(detail::make(y, std::move(nodes), [](Node& n) {
        Eigen::Index r = 0;
        for (auto& p : n.parents) {
            p->accumulate(n.grad.middleRows(r, p->value.rows()));
            r += p->value.rows();
        }
    }));
}

inline Var hcat(const std::vector<Var>& parts) {
    require(!parts.empty(), "hcat: empty");
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts[0].rows();
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        require_dims(p.rows() == rows, "hcat: row mismatch");
        cols += p.cols();
        nodes.push_back(p.node());
    }
    Matrix y(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        y.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    return Var(detail::make(y, std::move(nodes), [](Node& n) {
        Eigen::Index c = 0;
        for (auto& p : n.parents) {
            p->accumulate(n.grad.middleCols(c, p->value.cols()));
            c += p->value.cols();
        }
    }));
}

// Reinterpret the row-major element sequence as an r x c matrix.
inline Var reshape_rm(const Var& a, Eigen::Index r, Eigen::Index c) {
    require_dims(r * c == a.rows() * a.cols(), "reshape_rm: element count mismatch");
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor tmp = a.value();
    Matrix y = Eigen::Map<RowMajor>(tmp.data(), r, c);
    return Var(detail::make(y, {a.node()}, [](Node& n) {
        RowMajor g = n.grad;
        Matrix gx = Eigen::Map<RowMajor>(g.data(), n.parents[0]->value.rows(),
                                         n.parents[0]->value.cols());
        n.parents[0]->accumulate(gx);
    }));
}

// out.row(i) = idx[i] >= 0 ? x.row(idx[i]) : 0
inline Var gather_rows(const Var& x, std::vector<int> idx) {
    Matrix y = Matrix::Zero(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require_dims(idx[i] < x.rows(), "gather_rows: index out of range");
        if (idx[i] >= 0) y.row(static_cast<Eigen::Index>(i)) = x.value().row(idx[i]);
    }
    return Var(detail::make(y, {x.node()}, [idx = std::move(idx)](Node& n) {
        Matrix g = Matrix::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            if (idx[i] >= 0) g.row(idx[i]) += n.grad.row(static_cast<Eigen::Index>(i));
        n.parents[0]->accumulate(g);
    }));
}

// out(i, k) = idx(i, k) >= 0 ? x(i, idx(i, k)) : fill
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

inline Var gather_cols_per_row(const Var& x, IndexMatrix idx, double fill) {
    Matrix y(idx.rows(), idx.cols());
    for (Eigen::Index i = 0; i < idx.rows(); ++i)
        for (Eigen::Index k = 0; k < idx.cols(); ++k) {
            int j = idx(i, k);
            require_dims(j < x.cols(), "gather_cols_per_row: index out of range");
            y(i, k) = j >= 0 ? x.value()(i, j) : fill;
        }
    return Var(detail::make(y, {x.node()}, [idx = std::move(idx)](Node& n) {
        Matrix g = Matrix::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
        for (Eigen::Index i = 0; i < idx.rows(); ++i)
            for (Eigen::Index k = 0; k < idx.cols(); ++k)
                if (idx(i, k) >= 0) g(i, idx(i, k)) += n.grad(i, k);
        n.parents[0]->accumulate(g);
    }));
}

// ---- fused selective scan -------------------------------------------------

// h_t = exp(delta_t a) .* h_{t-1} + (delta_t u_t) b_t^T
// y_t = h_t c_t + d_skip .* u_t
// u, delta: L x Di; b, c: L x n; a: Di x n (<= 0); d_skip: Di x 1.
// The forward pass stores every state so the reverse recurrence is exact.
inline Var selective_scan(const Var& u, const Var& delta, const Var& b, const Var& c,
                          const Var& a, const Var& d_skip, const Matrix& h0 = Matrix()) {
    const Eigen::Index L = u.rows(), di = u.cols(), ns = b.cols();
    require_dims(delta.rows() == L && delta.cols() == di, "selective_scan: delta shape");
    require_dims(b.rows() == L && c.rows() == L && c.cols() == ns, "selective_scan: b/c shape");
    require_dims(a.rows() == di && a.cols() == ns, "selective_scan: a shape");
    require_dims(d_skip.rows() == di && d_skip.cols() == 1, "selective_scan: d_skip shape");

    Matrix hinit = h0.size() ? h0 : Matrix::Zero(di, ns);
    require_dims(hinit.rows() == di && hinit.cols() == ns, "selective_scan: h0 shape");

    auto states = std::make_shared<std::vector<Matrix>>();
    states->reserve(static_cast<std::size_t>(L));
    Matrix y(L, di);
    Matrix h = hinit;
    for (Eigen::Index t = 0; t < L; ++t) {
        Matrix abar =
            ((a.value().array().colwise() * delta.value().row(t).transpose().array()).exp()).matrix();
        h = abar.cwiseProduct(h) +
            (delta.value().row(t).cwiseProduct(u.value().row(t))).transpose() * b.value().row(t);
        states->push_back(h);
        y.row(t) = (h * c.value().row(t).transpose()).transpose() +
                   d_skip.value().col(0).transpose().cwiseProduct(u.value().row(t));
    }

    return Var(detail::make(
        y, {u.node(), delta.node(), b.node(), c.node(), a.node(), d_skip.node()},
        [states, hinit, L, di, ns](Node& n) {
            Node& nu = *n.parents[0];
            Node& nd = *n.parents[1];
            Node& nb = *n.parents[2];
            Node& nc = *n.parents[3];
            Node& na = *n.parents[4];
            Node& nskip = *n.parents[5];

            Matrix gu = Matrix::Zero(L, di), gdelta = Matrix::Zero(L, di);
            Matrix gb = Matrix::Zero(L, ns), gc = Matrix::Zero(L, ns);
            Matrix ga = Matrix::Zero(di, ns);
            Matrix gskip = Matrix::Zero(di, 1);
            Matrix gh = Matrix::Zero(di, ns);

            for (Eigen::Index t = L - 1; t >= 0; --t) {
                const Matrix& ht = (*states)[static_cast<std::size_t>(t)];
                const Matrix& hprev = t > 0 ? (*states)[static_cast<std::size_t>(t - 1)] : hinit;
                Eigen::RowVectorXd gy = n.grad.row(t);
                Eigen::RowVectorXd ut = nu.value.row(t);
                Eigen::RowVectorXd dt = nd.value.row(t);
                Eigen::RowVectorXd bt = nb.value.row(t);
                Eigen::RowVectorXd ct = nc.value.row(t);

                gc.row(t) += gy * ht;
                gskip.col(0) += gy.transpose().cwiseProduct(ut.transpose());
                gu.row(t) += gy.cwiseProduct(nskip.value.col(0).transpose());
                gh += gy.transpose() * ct;

                Matrix abar =
                    ((na.value.array().colwise() * dt.transpose().array()).exp()).matrix();
                gb.row(t) += dt.cwiseProduct(ut) * gh;
                Eigen::VectorXd ghb = gh * bt.transpose();  // Di x 1
                gu.row(t) += dt.transpose().cwiseProduct(ghb).transpose();

                Matrix decay_term = gh.cwiseProduct(abar).cwiseProduct(hprev);  // Di x ns
                gdelta.row(t) +=
                    (decay_term.cwiseProduct(na.value).rowwise().sum() + ut.transpose().cwiseProduct(ghb))
                        .transpose();
                ga.array() += decay_term.array().colwise() * dt.transpose().array();

                gh = gh.cwiseProduct(abar);
            }

            nu.accumulate(gu);
            nd.accumulate(gdelta);
            nb.accumulate(gb);
            nc.accumulate(gc);
            na.accumulate(ga);
            nskip.accumulate(gskip);
        }));
}

// ---- backward driver ------------------------------------------------------

inline void backward(const Var& root, Matrix seed = Matrix()) {
    if (seed.size() == 0) seed = Matrix::Ones(root.rows(), root.cols());
    require_dims(seed.rows() == root.rows() && seed.cols() == root.cols(),
                 "backward: seed shape mismatch");

    // iterative post-order DFS; tapes can be deep
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() != 0) n->backprop(*n);
    }
}

}  // namespace vimd::ad
