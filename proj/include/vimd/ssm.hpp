#pragma once

// Selective state-space primitive and the bidirectional ViM layer built on it.
// The sequential per-timestep loop is the reference semantics; the autodiff
// op in autodiff.hpp implements the same recurrence with stored states.

#include "vimd/autodiff.hpp"
#include "vimd/core.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace vimd {

struct ScanInputs {
    Matrix u;      // L x inner_dim
    Matrix delta;  // L x inner_dim, strictly positive
    Matrix b;      // L x state_dim
    Matrix c;      // L x state_dim

    void validate() const {
        require_dims(delta.rows() == u.rows() && b.rows() == u.rows() && c.rows() == u.rows(),
                     "ScanInputs: sequence lengths differ");
        require_dims(delta.cols() == u.cols(), "ScanInputs: delta channel mismatch");
        require_dims(b.cols() == c.cols(), "ScanInputs: b/c state dims differ");
        require((delta.array() > 0.0).all(), "ScanInputs: delta must be strictly positive");
    }
};

// y_t = <c_t, h_t> + d_skip .* u_t with h_t = exp(delta_t a) .* h_{t-1} + (delta_t u_t) b_t
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> selective_scan_impl(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& u,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& delta,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& b,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& c,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& a,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& d_skip,
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> h) {
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index L = u.rows(), di = u.cols(), ns = b.cols();
    if (h.size() == 0) h = Mat::Zero(di, ns);
    Mat y(L, di);
    for (Eigen::Index t = 0; t < L; ++t) {
        Mat abar = ((a.array().colwise() * delta.row(t).transpose().array()).exp()).matrix();
        h = abar.cwiseProduct(h) + (delta.row(t).cwiseProduct(u.row(t))).transpose() * b.row(t);
        y.row(t) = (h * c.row(t).transpose()).transpose() +
                   d_skip.transpose().cwiseProduct(u.row(t));
    }
    return y;
}

inline Matrix selective_scan(const ScanInputs& in, const Matrix& a, const Vector& d_skip,
                             const Matrix& h0 = Matrix()) {
    in.validate();
    require_dims(a.rows() == in.u.cols() && a.cols() == in.b.cols(),
                 "selective_scan: a must be inner_dim x state_dim");
    require_dims(d_skip.size() == in.u.cols(), "selective_scan: d_skip length mismatch");
    require((a.array() <= 0.0).all(), "selective_scan: a must be non-positive");
    return selective_scan_impl<double>(in.u, in.delta, in.b, in.c, a, d_skip, h0);
}

struct SSMParams {
    int model_dim = 0;
    int state_dim = 0;
    int inner_dim = 0;
    int conv_width = 4;
    int expand = 2;

    Matrix a_log;      // inner x state; A = -exp(a_log)
    Matrix d_skip;     // inner x 1
    Matrix norm_gain;  // 1 x model
    Matrix w_in;       // model x 2*inner  (signal and gate branches)
    Matrix b_in;       // 1 x 2*inner
    Matrix conv_w;     // conv_width x inner, row k = tap at lag k
    Matrix conv_b;     // 1 x inner
    Matrix w_delta;    // inner x inner
    Matrix b_delta;    // 1 x inner
    Matrix w_b;        // inner x state
    Matrix w_c;        // inner x state
    Matrix w_out;      // inner x model
    Matrix b_out;      // 1 x model

    static SSMParams init(int model_dim, int state_dim, int conv_width, int expand, Rng& rng) {
        SSMParams p;
        p.model_dim = model_dim;
        p.state_dim = state_dim;
        p.conv_width = conv_width;
        p.expand = expand;
        p.inner_dim = expand * model_dim;
        const int di = p.inner_dim;

        // A = -exp(a_log) with a_log(i, j) = log(j + 1); together with the
        // delta bias below the slowest state decays by ~exp(-0.1) ~ 0.9 per step.
        p.a_log = Matrix(di, state_dim);
        for (int j = 0; j < state_dim; ++j) p.a_log.col(j).setConstant(std::log(j + 1.0));
        p.d_skip = Matrix::Ones(di, 1);
        p.norm_gain = Matrix::Ones(1, model_dim);

        auto fan_in = [&rng](Eigen::Index in, Eigen::Index out) {
            return random_matrix(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)));
        };
        p.w_in = fan_in(model_dim, 2 * di);
        p.b_in = Matrix::Zero(1, 2 * di);
        p.conv_w = fan_in(conv_width, di);
        p.conv_b = Matrix::Zero(1, di);
        p.w_delta = fan_in(di, di) * 0.1;
        p.b_delta = Matrix::Constant(1, di, std::log(std::expm1(0.1)));  // softplus^-1(0.1)
        p.w_b = fan_in(di, state_dim);
        p.w_c = fan_in(di, state_dim);
        p.w_out = fan_in(di, model_dim);
        p.b_out = Matrix::Zero(1, model_dim);
        return p;
    }
};

// Parameter handles for one block inside an autodiff graph.
struct SSMVars {
    int conv_width = 4;
    ad::Var a_log, d_skip, norm_gain, w_in, b_in, conv_w, conv_b;
    ad::Var w_delta, b_delta, w_b, w_c, w_out, b_out;

    static SSMVars from(const SSMParams& p) {
        SSMVars v;
        v.conv_width = p.conv_width;
        v.a_log = ad::constant(p.a_log);
        v.d_skip = ad::constant(p.d_skip);
        v.norm_gain = ad::constant(p.norm_gain);
        v.w_in = ad::constant(p.w_in);
        v.b_in = ad::constant(p.b_in);
        v.conv_w = ad::constant(p.conv_w);
        v.conv_b = ad::constant(p.conv_b);
        v.w_delta = ad::constant(p.w_delta);
        v.b_delta = ad::constant(p.b_delta);
        v.w_b = ad::constant(p.w_b);
        v.w_c = ad::constant(p.w_c);
        v.w_out = ad::constant(p.w_out);
        v.b_out = ad::constant(p.b_out);
        return v;
    }
};

inline ad::Var rmsnorm(const ad::Var& x, const ad::Var& gain, double eps = 1e-6) {
    ad::Var ms = ad::rows_mean(ad::mul(x, x));
    ad::Var inv = ad::pow_scalar(ad::add_scalar(ms, eps), -0.5);
    return ad::mul_rowvec(ad::mul_colvec(x, inv), gain);
}

// Depthwise causal conv along the sequence axis: out(t, c) = sum_k w(k, c) x(t - k, c) + b(c).
inline ad::Var causal_conv1d(const ad::Var& x, const ad::Var& w, const ad::Var& b) {
    const int L = static_cast<int>(x.rows());
    const int K = static_cast<int>(w.rows());
    ad::Var acc;
    for (int k = 0; k < K; ++k) {
        std::vector<int> idx(static_cast<std::size_t>(L));
        for (int t = 0; t < L; ++t) idx[static_cast<std::size_t>(t)] = t - k >= 0 ? t - k : -1;
        ad::Var term = ad::mul_rowvec(ad::gather_rows(x, std::move(idx)), ad::slice_rows(w, k, 1));
        acc = k == 0 ? term : ad::add(acc, term);
    }
    return ad::add_rowvec(acc, b);
}

// norm -> in-proj -> causal conv -> silu -> gated selective scan -> out-proj
inline ad::Var mamba_block(const ad::Var& tokens, const SSMVars& p) {
    require_dims(tokens.cols() == p.w_in.rows(), "mamba_block: model_dim mismatch");
    const Eigen::Index di = p.w_in.cols() / 2;

    ad::Var normed = rmsnorm(tokens, p.norm_gain);
    ad::Var xz = ad::add_rowvec(ad::matmul(normed, p.w_in), p.b_in);
    ad::Var x = ad::slice_cols(xz, 0, di);
    ad::Var z = ad::slice_cols(xz, di, di);

    x = ad::silu(causal_conv1d(x, p.conv_w, p.conv_b));
    ad::Var delta = ad::softplus(ad::add_rowvec(ad::matmul(x, p.w_delta), p.b_delta));
    ad::Var b = ad::matmul(x, p.w_b);
    ad::Var c = ad::matmul(x, p.w_c);
    ad::Var a = ad::scale(ad::exp(p.a_log), -1.0);

    ad::Var y = ad::selective_scan(x, delta, b, c, a, p.d_skip);
    y = ad::mul(y, ad::silu(z));
    return ad::add_rowvec(ad::matmul(y, p.w_out), p.b_out);
}

inline ad::Var bidirectional_layer(const ad::Var& tokens, const SSMVars& fwd, const SSMVars& bwd) {
    require_dims(fwd.w_in.rows() == bwd.w_in.rows(), "bidirectional_layer: model_dim mismatch");
    ad::Var forward = mamba_block(tokens, fwd);
    ad::Var backward = ad::reverse_rows(mamba_block(ad::reverse_rows(tokens), bwd));
    return ad::add(forward, backward);
}

// Plain (inference-only) entry points over immutable parameter sets.

inline Matrix mamba_block(const Matrix& tokens, const SSMParams& p) {
    return mamba_block(ad::constant(tokens), SSMVars::from(p)).value();
}

inline Matrix bidirectional_layer(const Matrix& tokens, const SSMParams& fwd,
                                  const SSMParams& bwd) {
    return bidirectional_layer(ad::constant(tokens), SSMVars::from(fwd), SSMVars::from(bwd))
        .value();
}

}  // namespace vimd
