#pragma once

// Convolutional feature stack, patch tokenizer and sinusoidal positional
// encodings. Feature maps and images live as (h*w) x channels matrices in
// row-major raster order, which makes flattening to tokens a no-op.

#include "vimd/autodiff.hpp"
#include "vimd/core.hpp"
#include "vimd/params.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace vimd {

struct ImageTensor {
    Matrix data;  // (h*w) x channels, values in [0, 1]
    int h = 0;
    int w = 0;
    int channels() const { return static_cast<int>(data.cols()); }
};

struct Grid {
    Matrix data;  // (h*w) x channels
    int h = 0;
    int w = 0;
    int channels() const { return static_cast<int>(data.cols()); }
};

struct TokenSequence {
    Matrix tokens;  // N x D
    int rows = 0;   // grid shape for unflattening
    int cols = 0;
    int scale = 1;  // downsampling factor relative to the input image

    Eigen::Index length() const { return tokens.rows(); }
    Eigen::Index dim() const { return tokens.cols(); }
};

inline TokenSequence tokens_from_features(const Grid& level, int scale = 1) {
    require_dims(level.data.rows() == static_cast<Eigen::Index>(level.h) * level.w,
                 "tokens_from_features: grid shape mismatch");
    return TokenSequence{level.data, level.h, level.w, scale};
}

inline Grid unflatten(const TokenSequence& seq) {
    require_dims(seq.length() == static_cast<Eigen::Index>(seq.rows) * seq.cols,
                 "unflatten: token count does not match grid shape");
    return Grid{seq.tokens, seq.rows, seq.cols};
}

// The J = HW / P^2 patch tokenizer: each row is one flattened P x P x C patch.
inline Matrix patch_tokens(const ImageTensor& image, int patch_size) {
    require(patch_size > 0, "patch_tokens: patch size must be positive");
    require(image.h % patch_size == 0 && image.w % patch_size == 0,
            "patch_tokens: patch size must divide image dims");
    const int pr = image.h / patch_size, pc = image.w / patch_size;
    const int c = image.channels();
    Matrix out(static_cast<Eigen::Index>(pr) * pc, static_cast<Eigen::Index>(patch_size) * patch_size * c);
    for (int i = 0; i < pr; ++i)
        for (int j = 0; j < pc; ++j) {
            Eigen::Index row = static_cast<Eigen::Index>(i) * pc + j;
            Eigen::Index k = 0;
            for (int dr = 0; dr < patch_size; ++dr)
                for (int dc = 0; dc < patch_size; ++dc) {
                    Eigen::Index src =
                        static_cast<Eigen::Index>(i * patch_size + dr) * image.w + j * patch_size + dc;
                    out.block(row, k, 1, c) = image.data.row(src);
                    k += c;
                }
        }
    return out;
}

inline Matrix positional_encoding_matrix(Eigen::Index n, Eigen::Index d) {
    require(d % 2 == 0, "positional_encoding: dim must be even");
    Matrix p(n, d);
    for (Eigen::Index pos = 0; pos < n; ++pos)
        for (Eigen::Index i = 0; i < d / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
            p(pos, 2 * i) = std::sin(static_cast<double>(pos) * freq);
            p(pos, 2 * i + 1) = std::cos(static_cast<double>(pos) * freq);
        }
    return p;
}

inline TokenSequence positional_encoding(const TokenSequence& seq) {
    TokenSequence out = seq;
    out.tokens += positional_encoding_matrix(seq.length(), seq.dim());
    return out;
}

// ---- 2D convolution (im2col over the tape) --------------------------------

struct Conv2dVars {
    ad::Var w;  // (in_c * k * k) x out_c, tap-major column blocks
    ad::Var b;  // 1 x out_c
    int ksize = 3;
    int stride = 1;
    int pad = 1;
};

inline void init_conv(ParamStore& ps, const std::string& prefix, int in_c, int out_c, int k,
                      Rng& rng) {
    double fan = static_cast<double>(in_c) * k * k;
    ps.create(prefix + ".w", random_matrix(rng, static_cast<Eigen::Index>(in_c) * k * k, out_c,
                                           std::sqrt(2.0 / fan)));
    ps.create(prefix + ".b", Matrix::Zero(1, out_c));
}

inline Conv2dVars bind_conv(ParamStore& ps, const std::string& prefix, int k, int stride,
                            int pad) {
    return Conv2dVars{ps.var(prefix + ".w"), ps.var(prefix + ".b"), k, stride, pad};
}

inline ad::Var conv2d(const ad::Var& x, int h, int w, const Conv2dVars& p, int& oh, int& ow) {
    const int k = p.ksize, s = p.stride, pad = p.pad;
    oh = (h + 2 * pad - k) / s + 1;
    ow = (w + 2 * pad - k) / s + 1;
    require_dims(oh > 0 && ow > 0, "conv2d: output collapses to zero size");
    std::vector<ad::Var> taps;
    taps.reserve(static_cast<std::size_t>(k) * k);
    for (int dr = 0; dr < k; ++dr)
        for (int dc = 0; dc < k; ++dc) {
            std::vector<int> idx(static_cast<std::size_t>(oh) * ow);
            for (int r = 0; r < oh; ++r)
                for (int c = 0; c < ow; ++c) {
                    int ir = r * s - pad + dr, ic = c * s - pad + dc;
                    idx[static_cast<std::size_t>(r) * ow + c] =
                        (ir >= 0 && ir < h && ic >= 0 && ic < w) ? ir * w + ic : -1;
                }
            taps.push_back(ad::gather_rows(x, std::move(idx)));
        }
    return ad::add_rowvec(ad::matmul(ad::hcat(taps), p.w), p.b);
}

// ---- feature extractor -----------------------------------------------------

struct EncoderConfig {
    int in_channels = 3;
    int feature_dim = 128;  // channels of the 1/8 level fed to the ViM stack
    int c_half() const { return std::max(8, feature_dim / 4); }
    int c_quarter() const { return std::max(16, feature_dim / 2); }
};

inline void init_encoder(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng) {
    const int c1 = cfg.c_half(), c2 = cfg.c_quarter(), c3 = cfg.feature_dim;
    init_conv(ps, prefix + ".stem", cfg.in_channels, c1, 3, rng);
    init_conv(ps, prefix + ".res1a", c1, c1, 3, rng);
    init_conv(ps, prefix + ".res1b", c1, c1, 3, rng);
    init_conv(ps, prefix + ".down2", c1, c2, 3, rng);
    init_conv(ps, prefix + ".res2a", c2, c2, 3, rng);
    init_conv(ps, prefix + ".res2b", c2, c2, 3, rng);
    init_conv(ps, prefix + ".down3", c2, c3, 3, rng);
    init_conv(ps, prefix + ".res3a", c3, c3, 3, rng);
    init_conv(ps, prefix + ".res3b", c3, c3, 3, rng);
    init_conv(ps, prefix + ".res4a", c3, c3, 3, rng);
    init_conv(ps, prefix + ".res4b", c3, c3, 3, rng);
    init_conv(ps, prefix + ".proj", c3, c3, 1, rng);
}

struct FeatureVars {
    ad::Var quarter;  // (h/4 * w/4) x c_quarter
    ad::Var eighth;   // (h/8 * w/8) x feature_dim
    int qh = 0, qw = 0;
    int eh = 0, ew = 0;
};

inline ad::Var residual_block(const ad::Var& x, int h, int w, ParamStore& ps,
                              const std::string& prefix) {
    int oh = 0, ow = 0;
    ad::Var y = ad::relu(conv2d(x, h, w, bind_conv(ps, prefix + "a", 3, 1, 1), oh, ow));
    y = conv2d(y, h, w, bind_conv(ps, prefix + "b", 3, 1, 1), oh, ow);
    return ad::relu(ad::add(x, y));
}

inline FeatureVars extract_features(ParamStore& ps, const std::string& prefix,
                                    const ImageTensor& image) {
    require(image.h % 8 == 0 && image.w % 8 == 0,
            "extract_features: image dims must be divisible by 8");
    FeatureVars out;
    int h = image.h, w = image.w, oh = 0, ow = 0;
    ad::Var x = ad::constant(image.data);

    x = ad::relu(conv2d(x, h, w, bind_conv(ps, prefix + ".stem", 3, 2, 1), oh, ow));
    h = oh, w = ow;
    x = residual_block(x, h, w, ps, prefix + ".res1");

    x = ad::relu(conv2d(x, h, w, bind_conv(ps, prefix + ".down2", 3, 2, 1), oh, ow));
    h = oh, w = ow;
    x = residual_block(x, h, w, ps, prefix + ".res2");
    out.quarter = x;
    out.qh = h, out.qw = w;

    x = ad::relu(conv2d(x, h, w, bind_conv(ps, prefix + ".down3", 3, 2, 1), oh, ow));
    h = oh, w = ow;
    x = residual_block(x, h, w, ps, prefix + ".res3");
    x = residual_block(x, h, w, ps, prefix + ".res4");
    x = conv2d(x, h, w, bind_conv(ps, prefix + ".proj", 1, 1, 0), oh, ow);
    out.eighth = x;
    out.eh = h, out.ew = w;
    return out;
}

struct FeaturePyramid {
    Grid level_quarter;
    Grid level_eighth;
};

// Inference-only pyramid over frozen weights.
inline FeaturePyramid extract_features_plain(ParamStore& ps, const std::string& prefix,
                                             const ImageTensor& image) {
    ps.begin_graph(false);
    FeatureVars v = extract_features(ps, prefix, image);
    return FeaturePyramid{Grid{v.quarter.value(), v.qh, v.qw}, Grid{v.eighth.value(), v.eh, v.ew}};
}

}  // namespace vimd
