#pragma once

// The full stereo network: shared CNN encoder, positional encodings,
// symmetric concatenation, residual bidirectional ViM stack, optional
// self-attention, correlation matching, local refinement and convex
// upsampling to input resolution.

#include "vimd/core.hpp"
#include "vimd/encoder.hpp"
#include "vimd/matching.hpp"
#include "vimd/metrics.hpp"
#include "vimd/params.hpp"
#include "vimd/ssm.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace vimd {

struct ModelConfig {
    int num_layers = 6;
    int passes = 1;              // 2 = sequential traversal per sequence order
    bool dual_sequence = true;   // false = forward-order sequence only (1-pass ablation)
    bool self_attention = false;
    int sa_heads = 4;
    int model_dim = 128;
    int state_dim = 8;
    int conv_width = 4;
    int expand = 2;
    double max_disparity = 192;  // full-resolution pixels
    double candidate_step = 1.0; // feature-scale pixels
    int local_radius = 2;
    int refine_iters = 1;
    int upsample_factor = 8;

    void validate() const {
        require(num_layers >= 1, "ModelConfig: num_layers must be >= 1");
        require(passes == 1 || passes == 2, "ModelConfig: passes must be 1 or 2");
        require(max_disparity > 0, "ModelConfig: max_disparity must be positive");
        require(model_dim % 2 == 0, "ModelConfig: model_dim must be even");
        require(!self_attention || model_dim % sa_heads == 0,
                "ModelConfig: sa_heads must divide model_dim");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"num_layers", c.num_layers},
                       {"passes", c.passes},
                       {"dual_sequence", c.dual_sequence},
                       {"self_attention", c.self_attention},
                       {"sa_heads", c.sa_heads},
                       {"model_dim", c.model_dim},
                       {"state_dim", c.state_dim},
                       {"conv_width", c.conv_width},
                       {"expand", c.expand},
                       {"max_disparity", c.max_disparity},
                       {"candidate_step", c.candidate_step},
                       {"local_radius", c.local_radius},
                       {"refine_iters", c.refine_iters},
                       {"upsample_factor", c.upsample_factor}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("num_layers").get_to(c.num_layers);
    j.at("passes").get_to(c.passes);
    j.at("dual_sequence").get_to(c.dual_sequence);
    j.at("self_attention").get_to(c.self_attention);
    j.at("sa_heads").get_to(c.sa_heads);
    j.at("model_dim").get_to(c.model_dim);
    j.at("state_dim").get_to(c.state_dim);
    j.at("conv_width").get_to(c.conv_width);
    j.at("expand").get_to(c.expand);
    j.at("max_disparity").get_to(c.max_disparity);
    j.at("candidate_step").get_to(c.candidate_step);
    j.at("local_radius").get_to(c.local_radius);
    j.at("refine_iters").get_to(c.refine_iters);
    j.at("upsample_factor").get_to(c.upsample_factor);
}

// ---- sequence plumbing: symmetric concatenation and even splits ------------

inline std::pair<TokenSequence, TokenSequence> concat_symmetric(const TokenSequence& f_left,
                                                                const TokenSequence& f_right) {
    require(f_left.length() == f_right.length() && f_left.dim() == f_right.dim(),
            "concat_symmetric: sequences must share length and dim");
    TokenSequence fwd = f_left, rev = f_left;
    fwd.tokens.resize(2 * f_left.length(), f_left.dim());
    fwd.tokens << f_left.tokens, f_right.tokens;
    rev.tokens.resize(2 * f_left.length(), f_left.dim());
    rev.tokens << f_right.tokens, f_left.tokens;
    return {fwd, rev};
}

inline std::pair<TokenSequence, TokenSequence> split_even(const TokenSequence& seq) {
    require(seq.length() % 2 == 0, "split_even: sequence length must be even");
    const Eigen::Index n = seq.length() / 2;
    TokenSequence left = seq, right = seq;
    left.tokens = seq.tokens.topRows(n);
    right.tokens = seq.tokens.bottomRows(n);
    return {left, right};
}

// ---- SSM parameter registration -------------------------------------------

inline void init_ssm(ParamStore& ps, const std::string& prefix, const SSMParams& p) {
    ps.create(prefix + ".a_log", p.a_log);
    ps.create(prefix + ".d_skip", p.d_skip);
    ps.create(prefix + ".norm_gain", p.norm_gain);
    ps.create(prefix + ".w_in", p.w_in);
    ps.create(prefix + ".b_in", p.b_in);
    ps.create(prefix + ".conv_w", p.conv_w);
    ps.create(prefix + ".conv_b", p.conv_b);
    ps.create(prefix + ".w_delta", p.w_delta);
    ps.create(prefix + ".b_delta", p.b_delta);
    ps.create(prefix + ".w_b", p.w_b);
    ps.create(prefix + ".w_c", p.w_c);
    ps.create(prefix + ".w_out", p.w_out);
    ps.create(prefix + ".b_out", p.b_out);
}

inline SSMVars bind_ssm(ParamStore& ps, const std::string& prefix, int conv_width) {
    SSMVars v;
    v.conv_width = conv_width;
    v.a_log = ps.var(prefix + ".a_log");
    v.d_skip = ps.var(prefix + ".d_skip");
    v.norm_gain = ps.var(prefix + ".norm_gain");
    v.w_in = ps.var(prefix + ".w_in");
    v.b_in = ps.var(prefix + ".b_in");
    v.conv_w = ps.var(prefix + ".conv_w");
    v.conv_b = ps.var(prefix + ".conv_b");
    v.w_delta = ps.var(prefix + ".w_delta");
    v.b_delta = ps.var(prefix + ".b_delta");
    v.w_b = ps.var(prefix + ".w_b");
    v.w_c = ps.var(prefix + ".w_c");
    v.w_out = ps.var(prefix + ".w_out");
    v.b_out = ps.var(prefix + ".b_out");
    return v;
}

// One multi-head scaled-dot-product self-attention layer with residual.
inline ad::Var self_attention_block(const ad::Var& tokens, ParamStore& ps,
                                    const std::string& prefix, int heads) {
    const Eigen::Index d = tokens.cols();
    require_dims(d % heads == 0, "self_attention: heads must divide dim");
    const Eigen::Index dh = d / heads;
    ad::Var q = ad::matmul(tokens, ps.var(prefix + ".wq"));
    ad::Var k = ad::matmul(tokens, ps.var(prefix + ".wk"));
    ad::Var v = ad::matmul(tokens, ps.var(prefix + ".wv"));
    std::vector<ad::Var> outs;
    for (int h = 0; h < heads; ++h) {
        ad::Var qh = ad::slice_cols(q, h * dh, dh);
        ad::Var kh = ad::slice_cols(k, h * dh, dh);
        ad::Var vh = ad::slice_cols(v, h * dh, dh);
        ad::Var scores =
            ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    ad::Var o = ad::matmul(ad::hcat(outs), ps.var(prefix + ".wo"));
    return ad::add(tokens, o);
}

// ---- the model -------------------------------------------------------------

class VimStereoModel {
public:
    struct ForwardStats {
        int stack_traversals = 0;
        int layer_applications = 0;
    };

    struct ForwardResult {
        ad::Var full;    // (H*W) x 1 disparity, full-resolution pixels
        ad::Var coarse;  // (gh*gw) x 1 disparity, feature-scale pixels
        int h = 0, w = 0;
        int gh = 0, gw = 0;
        ForwardStats stats;
    };

    VimStereoModel(ModelConfig cfg, unsigned seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(seed);
        EncoderConfig enc{3, cfg_.model_dim};
        init_encoder(ps_, "encoder", enc, rng);
        for (int l = 0; l < cfg_.num_layers; ++l) {
            init_ssm(ps_, layer_prefix(l) + ".fwd",
                     SSMParams::init(cfg_.model_dim, cfg_.state_dim, cfg_.conv_width, cfg_.expand,
                                     rng));
            init_ssm(ps_, layer_prefix(l) + ".bwd",
                     SSMParams::init(cfg_.model_dim, cfg_.state_dim, cfg_.conv_width, cfg_.expand,
                                     rng));
        }
        const int d = cfg_.model_dim;
        auto attn_w = [&] { return random_matrix(rng, d, d, 1.0 / std::sqrt(double(d))); };
        ps_.create("sa.wq", attn_w());
        ps_.create("sa.wk", attn_w());
        ps_.create("sa.wv", attn_w());
        ps_.create("sa.wo", attn_w() * 0.1);
        init_refine_head(ps_, "refine", d, rng);
        init_upsample_head(ps_, "upsample", d, cfg_.upsample_factor, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // Same weights under a different pass/attention policy (ablations).
    VimStereoModel variant(const ModelConfig& cfg) const {
        require(cfg.model_dim == cfg_.model_dim && cfg.num_layers == cfg_.num_layers &&
                    cfg.state_dim == cfg_.state_dim && cfg.expand == cfg_.expand,
                "variant: architecture dims must match the trained weights");
        cfg.validate();
        VimStereoModel m = *this;
        m.cfg_ = cfg;
        return m;
    }
    ParamStore& params() { return ps_; }
    const ForwardStats& last_stats() const { return stats_; }

    ForwardResult forward_graph(const ImageTensor& left, const ImageTensor& right,
                                bool train = false) {
        require(left.h == right.h && left.w == right.w, "forward: stereo shapes differ");
        require(left.h % 8 == 0 && left.w % 8 == 0, "forward: dims must be divisible by 8");
        ps_.begin_graph(train);
        stats_ = ForwardStats{};

        FeatureVars fl = extract_features(ps_, "encoder", left);
        FeatureVars fr = extract_features(ps_, "encoder", right);
        const int gh = fl.eh, gw = fl.ew;
        const Eigen::Index n = static_cast<Eigen::Index>(gh) * gw;

        Matrix pos = positional_encoding_matrix(n, cfg_.model_dim);
        ad::Var tl = ad::add(fl.eighth, ad::constant(pos));
        ad::Var tr = ad::add(fr.eighth, ad::constant(pos));
        check_finite(tl, "encoder");

        ad::Var cat_fwd = ad::vcat({tl, tr});
        ad::Var cat_rev = ad::vcat({tr, tl});

        ad::Var left_tokens, right_tokens;
        if (!cfg_.dual_sequence) {
            ad::Var out = encode_stack({cat_fwd})[0];
            left_tokens = ad::slice_rows(out, 0, n);
            right_tokens = ad::slice_rows(out, n, n);
        } else if (cfg_.passes == 1) {
            auto outs = encode_stack({cat_fwd, cat_rev});
            left_tokens = ad::scale(
                ad::add(ad::slice_rows(outs[0], 0, n), ad::slice_rows(outs[1], n, n)), 0.5);
            right_tokens = ad::scale(
                ad::add(ad::slice_rows(outs[0], n, n), ad::slice_rows(outs[1], 0, n)), 0.5);
        } else {
            ad::Var out_fwd = encode_stack({cat_fwd})[0];
            ad::Var out_rev = encode_stack({cat_rev})[0];
            left_tokens = ad::scale(
                ad::add(ad::slice_rows(out_fwd, 0, n), ad::slice_rows(out_rev, n, n)), 0.5);
            right_tokens = ad::scale(
                ad::add(ad::slice_rows(out_fwd, n, n), ad::slice_rows(out_rev, 0, n)), 0.5);
        }
        check_finite(left_tokens, "vim stack");

        CandidateSet cands =
            build_candidates(cfg_.max_disparity, cfg_.upsample_factor, cfg_.candidate_step);
        ad::Var scores = correlation_cost_graph(left_tokens, right_tokens, gh, gw, cands);
        ad::Var disp = soft_regress_graph(scores, cands);
        disp = local_match_graph(scores, cands, disp.value(), cfg_.local_radius);
        check_finite(disp, "matching");

        // supervise the matching estimate itself: its softmax gradients stay
        // alive even when the refinement relu saturates at zero
        ad::Var matched = disp;

        for (int i = 0; i < cfg_.refine_iters; ++i)
            disp = refine_residual_graph(disp, left_tokens, gh, gw, ps_, "refine");

        ad::Var mask = upsample_mask_graph(left_tokens, gh, gw, ps_, "upsample");
        // unclamped: the loss must see raw values, otherwise a saturated clamp
        // zeroes every gradient; inference output is clamped in forward()
        ad::Var full = convex_upsample_graph(disp, mask, gh, gw, cfg_.upsample_factor);
        check_finite(full, "upsampling");

        ForwardResult res;
        res.full = full;
        res.coarse = matched;
        res.h = left.h;
        res.w = left.w;
        res.gh = gh;
        res.gw = gw;
        res.stats = stats_;
        return res;
    }

    DisparityMap forward(const ImageTensor& left, const ImageTensor& right) {
        ForwardResult r = forward_graph(left, right, false);
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        RowMajor flat =
            r.full.value().cwiseMax(0.0).cwiseMin(static_cast<double>(cfg_.max_disparity));
        return DisparityMap::dense(Eigen::Map<RowMajor>(flat.data(), r.h, r.w));
    }

    // ---- checkpoint archive ------------------------------------------------

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        require(f.good(), "checkpoint: cannot open " + path + " for writing");
        const std::string magic = "VIMDCKPT";
        f.write(magic.data(), 8);
        std::string cfg = nlohmann::json(cfg_).dump();
        write_u32(f, 1);  // format version
        write_u32(f, static_cast<std::uint32_t>(cfg.size()));
        f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
        write_u32(f, static_cast<std::uint32_t>(ps_.entries().size()));
        for (const auto& [name, e] : ps_.entries()) {
            write_u32(f, static_cast<std::uint32_t>(name.size()));
            f.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(f, static_cast<std::uint32_t>(e.value.rows()));
            write_u32(f, static_cast<std::uint32_t>(e.value.cols()));
            f.write(reinterpret_cast<const char*>(e.value.data()),
                    static_cast<std::streamsize>(sizeof(double) * e.value.size()));
        }
        require(f.good(), "checkpoint: write failed for " + path);
    }

    static VimStereoModel load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f.good()) throw FormatError("checkpoint: cannot open " + path);
        char magic[8];
        f.read(magic, 8);
        if (std::string(magic, 8) != "VIMDCKPT") throw FormatError("checkpoint: bad magic");
        if (read_u32(f) != 1) throw FormatError("checkpoint: unsupported format version");
        std::string cfg_text(read_u32(f), '\0');
        f.read(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
        ModelConfig cfg = nlohmann::json::parse(cfg_text).get<ModelConfig>();
        VimStereoModel model(cfg, 0);
        const std::uint32_t n = read_u32(f);
        for (std::uint32_t i = 0; i < n; ++i) {
            std::string name(read_u32(f), '\0');
            f.read(name.data(), static_cast<std::streamsize>(name.size()));
            const std::uint32_t rows = read_u32(f), cols = read_u32(f);
            Matrix m(rows, cols);
            f.read(reinterpret_cast<char*>(m.data()),
                   static_cast<std::streamsize>(sizeof(double) * m.size()));
            if (!f.good()) throw FormatError("checkpoint: truncated parameter " + name);
            ParamEntry& e = model.ps_.entry(name);
            if (e.value.rows() != m.rows() || e.value.cols() != m.cols())
                throw FormatError("checkpoint: shape mismatch for " + name);
            e.value = std::move(m);
        }
        return model;
    }

private:
    static std::string layer_prefix(int l) { return "vim.l" + std::to_string(l); }

    std::vector<ad::Var> encode_stack(std::vector<ad::Var> seqs) {
        ++stats_.stack_traversals;
        for (int l = 0; l < cfg_.num_layers; ++l) {
            SSMVars fwd = bind_ssm(ps_, layer_prefix(l) + ".fwd", cfg_.conv_width);
            SSMVars bwd = bind_ssm(ps_, layer_prefix(l) + ".bwd", cfg_.conv_width);
            for (auto& s : seqs) {
                s = ad::add(bidirectional_layer(s, fwd, bwd), s);
                if (!s.value().allFinite())
                    throw NumericError("non-finite output at vim layer " + std::to_string(l));
            }
            ++stats_.layer_applications;
        }
        if (cfg_.self_attention)
            for (auto& s : seqs) s = self_attention_block(s, ps_, "sa", cfg_.sa_heads);
        return seqs;
    }

    static void check_finite(const ad::Var& v, const std::string& stage) {
        if (!v.value().allFinite()) throw NumericError("non-finite output after " + stage);
    }

    static void write_u32(std::ofstream& f, std::uint32_t v) {
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    static std::uint32_t read_u32(std::ifstream& f) {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    }

    ModelConfig cfg_;
    ParamStore ps_;
    ForwardStats stats_;
};

}  // namespace vimd
