#pragma once

// Candidate generation, correlation, soft-argmax regression, windowed local
// matching, plane-sweep homography projection, residual refinement and
// convex upsampling. Plain entry points implement the operation contracts;
// the *_graph functions build the same math on the autodiff tape.

#include "vimd/autodiff.hpp"
#include "vimd/core.hpp"
#include "vimd/encoder.hpp"
#include "vimd/params.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace vimd {

inline constexpr double kInvalidLogit = -1e9;

struct CandidateSet {
    Vector values;  // strictly increasing, >= 0, feature-scale pixels
    int count() const { return static_cast<int>(values.size()); }
};

inline CandidateSet build_candidates(double d_max, int feature_stride, double step) {
    require(d_max > 0, "build_candidates: d_max must be positive");
    require(feature_stride > 0, "build_candidates: feature_stride must be positive");
    require(step > 0, "build_candidates: step must be positive");
    const double top = d_max / feature_stride;
    std::vector<double> vals;
    for (double d = 0.0; d <= top + 1e-9; d += step) vals.push_back(d);
    CandidateSet set;
    set.values = Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    return set;
}

// per-token dot product scaled by 1/sqrt(D)
inline Vector correlate(const Matrix& f1, const Matrix& f2_shifted) {
    require_dims(f1.rows() == f2_shifted.rows() && f1.cols() == f2_shifted.cols(),
                 "correlate: sequence shapes differ");
    return f1.cwiseProduct(f2_shifted).rowwise().sum() /
           std::sqrt(static_cast<double>(f1.cols()));
}

struct CostVolume {
    Matrix scores;        // N x Nc
    Matrix distribution;  // row-stochastic softmax of scores

    static Matrix softmax(const Matrix& scores) {
        Matrix m(scores.rows(), scores.cols());
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            Eigen::RowVectorXd e = (scores.row(i).array() - scores.row(i).maxCoeff()).exp();
            m.row(i) = e / e.sum();
        }
        return m;
    }

    static CostVolume from_scores(Matrix scores) {
        require(scores.allFinite(), "CostVolume: scores must be finite");
        CostVolume v;
        v.distribution = softmax(scores);
        v.scores = std::move(scores);
        return v;
    }
};

inline Vector soft_regress(const CostVolume& volume, const CandidateSet& candidates) {
    require_dims(volume.distribution.cols() == candidates.values.size(),
                 "soft_regress: volume width must equal candidate count");
    return volume.distribution * candidates.values;
}

// ---- geometry --------------------------------------------------------------

struct CameraParams {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    Eigen::Matrix4d e = Eigen::Matrix4d::Identity();  // world -> camera
};

struct CameraPair {
    CameraParams view1, view2;
};

struct Projection {
    Eigen::Vector2d point = Eigen::Vector2d::Zero();
    bool valid = false;  // false when behind camera 2; excluded from correlation
};

// Back-project through view 1 at the candidate depth, then project into view 2.
inline Projection homography_project(const Eigen::Vector2d& pt, double depth,
                                     const CameraPair& cams) {
    require(depth > 0, "homography_project: depth must be positive");
    Eigen::Vector3d ray = cams.view1.k.inverse() * pt.homogeneous();
    Eigen::Vector4d world = cams.view1.e.inverse() * (depth * ray).homogeneous();
    Eigen::Vector4d cam2 = cams.view2.e * world;
    Projection out;
    if (cam2.z() <= 0) return out;
    Eigen::Vector3d proj = cams.view2.k * cam2.head<3>();
    out.point = proj.hnormalized();
    out.valid = true;
    return out;
}

// 4-neighbor bilinear interpolation with border clamp.
inline Eigen::RowVectorXd bilinear_sample(const Grid& map, double x, double y) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(map.w - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(map.h - 1));
    const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
    const int x1 = std::min(x0 + 1, map.w - 1), y1 = std::min(y0 + 1, map.h - 1);
    const double fx = cx - x0, fy = cy - y0;
    return (1 - fy) * ((1 - fx) * map.data.row(y0 * map.w + x0) +
                       fx * map.data.row(y0 * map.w + x1)) +
           fy * ((1 - fx) * map.data.row(y1 * map.w + x0) + fx * map.data.row(y1 * map.w + x1));
}

inline Matrix clamp_positive(const Matrix& disparity) { return disparity.cwiseMax(0.0); }

// ---- cost volume over horizontal-shift candidates (tape version) -----------

// Left token (r, c) correlates with the right feature sampled at column c - d.
// Out-of-view candidates get a large negative logit so softmax excludes them.
inline ad::Var correlation_cost_graph(const ad::Var& f_left, const ad::Var& f_right, int gh,
                                      int gw, const CandidateSet& cands) {
    const Eigen::Index n = f_left.rows();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(f_left.cols()));
    std::vector<ad::Var> cols;
    Matrix mask = Matrix::Zero(n, cands.count());
    for (int ci = 0; ci < cands.count(); ++ci) {
        const double d = cands.values(ci);
        const double x0f = std::floor(d);
        const double frac = d - x0f;
        const int shift0 = static_cast<int>(x0f), shift1 = shift0 + 1;
        std::vector<int> idx0(static_cast<std::size_t>(n)), idx1(static_cast<std::size_t>(n));
        for (int r = 0; r < gh; ++r)
            for (int c = 0; c < gw; ++c) {
                const std::size_t i = static_cast<std::size_t>(r) * gw + c;
                idx0[i] = c - shift0 >= 0 ? r * gw + (c - shift0) : -1;
                idx1[i] = c - shift1 >= 0 ? r * gw + (c - shift1) : -1;
                if (c - d < -1e-9) mask(static_cast<Eigen::Index>(i), ci) = kInvalidLogit;
            }
        ad::Var shifted = frac < 1e-12
                              ? ad::gather_rows(f_right, std::move(idx0))
                              : ad::add(ad::scale(ad::gather_rows(f_right, std::move(idx0)),
                                                  1.0 - frac),
                                        ad::scale(ad::gather_rows(f_right, std::move(idx1)), frac));
        cols.push_back(ad::scale(ad::rows_dot(f_left, shifted), inv_sqrt_d));
    }
    return ad::add(ad::hcat(cols), ad::constant(mask));
}

inline ad::Var soft_regress_graph(const ad::Var& scores, const CandidateSet& cands) {
    return ad::matmul(ad::softmax_rows(scores), ad::constant(cands.values));
}

// Windowed soft-argmax of +-radius candidates around each token's estimate.
// The window placement is treated as a constant (no gradient through rounding).
inline ad::Var local_match_graph(const ad::Var& scores, const CandidateSet& cands,
                                 const Vector& init, int radius) {
    require(radius > 0, "local_match: radius must be positive");
    const Eigen::Index n = scores.rows();
    const int nc = cands.count();
    const int width = 2 * radius + 1;
    ad::IndexMatrix idx(n, width);
    Matrix window_values = Matrix::Zero(n, width);
    for (Eigen::Index i = 0; i < n; ++i) {
        int center = 0;
        double best = std::abs(cands.values(0) - init(i));
        for (int ci = 1; ci < nc; ++ci) {
            double dist = std::abs(cands.values(ci) - init(i));
            if (dist < best) best = dist, center = ci;
        }
        for (int k = 0; k < width; ++k) {
            int ci = center - radius + k;
            idx(i, k) = (ci >= 0 && ci < nc) ? ci : -1;
            window_values(i, k) = (ci >= 0 && ci < nc) ? cands.values(ci) : 0.0;
        }
    }
    ad::Var windowed = ad::gather_cols_per_row(scores, std::move(idx), kInvalidLogit);
    ad::Var weights = ad::softmax_rows(windowed);
    return ad::rows_sum(ad::mul(weights, ad::constant(window_values)));
}

inline Vector local_match(const Grid& f_left, const Grid& f_right, const Vector& init, int radius,
                          const CandidateSet& cands) {
    require(radius > 0, "local_match: radius must be positive");
    require_dims(init.size() == f_left.data.rows(), "local_match: init size mismatch");
    ad::Var scores = correlation_cost_graph(ad::constant(f_left.data), ad::constant(f_right.data),
                                            f_left.h, f_left.w, cands);
    Vector out = local_match_graph(scores, cands, init, radius).value();
    return out.cwiseMax(0.0);
}

// ---- refinement and upsampling ---------------------------------------------

inline void init_refine_head(ParamStore& ps, const std::string& prefix, int feature_dim,
                             Rng& rng) {
    init_conv(ps, prefix + ".c1", feature_dim + 1, 32, 3, rng);
    init_conv(ps, prefix + ".c2", 32, 1, 3, rng);
}

// Small conv head predicting a disparity residual. Deliberately linear in the
// output: a relu here saturates at zero early in training and kills every
// gradient; range clamping belongs to the final upsampled output.
inline ad::Var refine_residual_graph(const ad::Var& disparity, const ad::Var& features, int gh,
                                     int gw, ParamStore& ps, const std::string& prefix) {
    int oh = 0, ow = 0;
    ad::Var x = ad::hcat({features, disparity});
    x = ad::relu(conv2d(x, gh, gw, bind_conv(ps, prefix + ".c1", 3, 1, 1), oh, ow));
    ad::Var delta = conv2d(x, gh, gw, bind_conv(ps, prefix + ".c2", 3, 1, 1), oh, ow);
    return ad::add(disparity, delta);
}

namespace detail {

// 3x3 coarse neighborhood, row-major, border clamp
inline int upsample_neighbor(int cell, int tap, int ch, int cw) {
    const int r = cell / cw, c = cell % cw;
    const int nr = std::clamp(r + tap / 3 - 1, 0, ch - 1);
    const int nc = std::clamp(c + tap % 3 - 1, 0, cw - 1);
    return nr * cw + nc;
}

}  // namespace detail

// Fine pixels as convex combinations of the 3x3 coarse neighborhood, times
// the scale factor (disparity rescales with resolution). Weight rows follow
// fine raster order.
inline Matrix convex_upsample(const Matrix& coarse, const Matrix& weights, int factor) {
    require(factor > 0, "convex_upsample: factor must be positive");
    const int ch = static_cast<int>(coarse.rows()), cw = static_cast<int>(coarse.cols());
    const int fh = ch * factor, fw = cw * factor;
    require_dims(weights.rows() == static_cast<Eigen::Index>(fh) * fw && weights.cols() == 9,
                 "convex_upsample: weights must be (fine pixels) x 9");
    for (Eigen::Index i = 0; i < weights.rows(); ++i) {
        require((weights.row(i).array() >= -1e-9).all(),
                "convex_upsample: weights must be non-negative");
        require(std::abs(weights.row(i).sum() - 1.0) <= 1e-6,
                "convex_upsample: weight rows must sum to 1");
    }
    Matrix fine(fh, fw);
    for (int fr = 0; fr < fh; ++fr)
        for (int fc = 0; fc < fw; ++fc) {
            const int cell = (fr / factor) * cw + fc / factor;
            double acc = 0.0;
            for (int t = 0; t < 9; ++t) {
                const int nb = detail::upsample_neighbor(cell, t, ch, cw);
                acc += weights(static_cast<Eigen::Index>(fr) * fw + fc, t) *
                       coarse(nb / cw, nb % cw);
            }
            fine(fr, fc) = acc * factor;
        }
    return fine;
}

// Tape version: coarse (ch*cw) x 1 plus mask logits (ch*cw) x (factor^2 * 9),
// softmax over each 9-way group; returns (fh*fw) x 1 in fine raster order.
inline ad::Var convex_upsample_graph(const ad::Var& coarse, const ad::Var& mask_logits, int ch,
                                     int cw, int factor) {
    const int f2 = factor * factor;
    const Eigen::Index cells = static_cast<Eigen::Index>(ch) * cw;
    require_dims(mask_logits.rows() == cells && mask_logits.cols() == f2 * 9,
                 "convex_upsample_graph: mask shape mismatch");
    ad::Var w = ad::softmax_rows(ad::reshape_rm(mask_logits, cells * f2, 9));

    ad::Var acc;
    for (int t = 0; t < 9; ++t) {
        std::vector<int> idx(static_cast<std::size_t>(cells) * f2);
        for (Eigen::Index cell = 0; cell < cells; ++cell) {
            const int nb = detail::upsample_neighbor(static_cast<int>(cell), t, ch, cw);
            for (int sub = 0; sub < f2; ++sub) idx[static_cast<std::size_t>(cell) * f2 + sub] = nb;
        }
        ad::Var term = ad::mul(ad::slice_cols(w, t, 1), ad::gather_rows(coarse, std::move(idx)));
        acc = t == 0 ? term : ad::add(acc, term);
    }
    acc = ad::scale(acc, static_cast<double>(factor));

    // (cell, sub) order -> fine raster order
    const int fw = cw * factor;
    std::vector<int> perm(static_cast<std::size_t>(cells) * f2);
    for (int fr = 0; fr < ch * factor; ++fr)
        for (int fc = 0; fc < fw; ++fc) {
            const int cell = (fr / factor) * cw + fc / factor;
            const int sub = (fr % factor) * factor + fc % factor;
            perm[static_cast<std::size_t>(fr) * fw + fc] = cell * f2 + sub;
        }
    return ad::gather_rows(acc, std::move(perm));
}

inline void init_upsample_head(ParamStore& ps, const std::string& prefix, int feature_dim,
                               int factor, Rng& rng) {
    init_conv(ps, prefix + ".c1", feature_dim, 64, 3, rng);
    init_conv(ps, prefix + ".c2", 64, factor * factor * 9, 1, rng);
}

inline ad::Var upsample_mask_graph(const ad::Var& features, int gh, int gw, ParamStore& ps,
                                   const std::string& prefix) {
    int oh = 0, ow = 0;
    ad::Var x = ad::relu(conv2d(features, gh, gw, bind_conv(ps, prefix + ".c1", 3, 1, 1), oh, ow));
    return conv2d(x, gh, gw, bind_conv(ps, prefix + ".c2", 1, 1, 0), oh, ow);
}

}  // namespace vimd
