// Acceptance gate: ten pass/fail criteria covering metric arithmetic against
// the published benchmark tables, oracle equivalence, gradient checks,
// architecture contracts, desk-scale overfitting, the measurement protocols,
// ablation directionality, on-disk formats and rectified geometry.

#include "vimd/bench.hpp"
#include "vimd/render.hpp"
#include "vimd/train.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace vimd;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s — %s\n", ok ? "PASS" : "FAIL", index, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

struct Check {
    bool ok = true;
    std::ostringstream detail;
    void expect(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            detail << (detail.str().empty() ? "" : "; ") << what;
        }
    }
};

// ---- criterion 1: SOMER reproduction from the published table --------------

struct TableRow {
    const char* dataset;
    const char* model;
    double epe, fps, mem, printed;
};

// (dataset, model) -> (EPE, FPS, MEM, printed SOMER), frozen from the
// published comparison table.
const TableRow kTable[] = {
    {"KITTI", "Unimatch", 1.21, 10.02, 921, 1.21},
    {"KITTI", "I-GEV", 0.28, 1.57, 119, 1.173},
    {"KITTI", "Anynet", 10.94, 31.45, 270, 0.513},
    {"KITTI", "RAFT", 1.08, 3.30, 102, 0.66},
    {"KITTI", "Proposed", 1.38, 51.53, 345, 6.409},
    {"Sceneflow", "Unimatch", 0.72, 9.05, 1007, 1.82},
    {"Sceneflow", "I-GEV", 0.47, 1.57, 119, 0.698},
    {"Sceneflow", "Anynet", 54.94, 31.45, 154, 0.114},
    {"Sceneflow", "RAFT", 1.80, 2.88, 102, 0.345},
    {"Sceneflow", "Proposed", 4.4, 47.41, 375, 1.83},
    {"Sintel", "Unimatch", 1.45, 10.55, 882, 1.07},
    {"Sintel", "I-GEV", 0.32, 1.87, 118, 0.1223},  // suspected 10x typo
    {"Sintel", "Anynet", 88.04, 42.22, 263, 0.086},
    {"Sintel", "RAFT", 0.45, 3.52, 101, 1.692},
    {"Sintel", "Proposed", 11.53, 52.53, 334, 0.785},
    {"VKITTI2", "Unimatch", 1.95, 10.04, 922, 0.75},
    {"VKITTI2", "I-GEV", 0.92, 2.42, 118, 0.551},
    {"VKITTI2", "Anynet", 88.55, 42.24, 275, 0.085},
    {"VKITTI2", "RAFT", 0.92, 1.60, 102, 0.376},
    {"VKITTI2", "Proposed", 1.146, 50.62, 346, 7.644},
    {"All", "Unimatch", 1.33, 9.78, 992, 1.06},
    {"All", "I-GEV", 0.49, 1.89, 121, 0.8},
    {"All", "Anynet", 60.61, 35.21, 247, 0.105},
    {"All", "RAFT", 1.06, 2.92, 102, 0.595},
    {"All", "Proposed", 1.47, 50.48, 372, 5.8},
};

void criterion_somer() {
    Check c;
    int within = 0;
    std::string outliers;
    for (const TableRow& r : kTable) {
        double rel = std::abs(somer(r.fps, r.epe, r.mem) - r.printed) / r.printed;
        if (rel <= 0.03)
            ++within;
        else
            outliers += std::string(" ") + r.dataset + "/" + r.model;
    }
    c.expect(within >= 24, "only " + std::to_string(within) + " of 25 rows within 3%");
    c.expect(outliers.empty() || outliers == " Sintel/I-GEV",
             "unexpected outliers:" + outliers);
    c.expect(std::abs(somer(1.57, 0.28, 119) - 1.173) < 5e-4, "KITTI/I-GEV anchor");
    c.expect(std::abs(somer(51.53, 1.38, 345) - 6.409) / 6.409 < 0.01, "KITTI/Proposed anchor");
    c.expect(std::abs(somer(50.48, 1.47, 372) - 5.8) / 5.8 < 0.01, "All-datasets anchor");
    report(1, "SOMER arithmetic vs published table", c.ok,
           c.ok ? std::to_string(within) + "/25 rows within 3%, anchors hit" : c.detail.str());
}

// ---- criterion 2: scan oracle ----------------------------------------------

Matrix naive_scan(const Matrix& u, const Matrix& delta, const Matrix& b, const Matrix& cc,
                  const Matrix& a, const Vector& d_skip) {
    const Eigen::Index L = u.rows(), di = u.cols(), ns = b.cols();
    Matrix h = Matrix::Zero(di, ns), y(L, di);
    for (Eigen::Index t = 0; t < L; ++t)
        for (Eigen::Index ch = 0; ch < di; ++ch) {
            double acc = 0.0;
            for (Eigen::Index s = 0; s < ns; ++s) {
                h(ch, s) = std::exp(delta(t, ch) * a(ch, s)) * h(ch, s) +
                           delta(t, ch) * u(t, ch) * b(t, s);
                acc += cc(t, s) * h(ch, s);
            }
            y(t, ch) = acc + d_skip(ch) * u(t, ch);
        }
    return y;
}

void criterion_scan_oracle() {
    Check c;
    Rng rng(2024);
    std::uniform_int_distribution<int> len(1, 32), inner(1, 8), state(1, 4);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
        const int L = len(rng), di = inner(rng), ns = state(rng);
        ScanInputs in;
        in.u = random_matrix(rng, L, di);
        in.delta = random_matrix(rng, L, di).array().abs() + 0.05;
        in.b = random_matrix(rng, L, ns);
        in.c = random_matrix(rng, L, ns);
        Matrix a = -random_matrix(rng, di, ns).cwiseAbs();
        Vector d = random_matrix(rng, di, 1);
        double err = (selective_scan(in, a, d) - naive_scan(in.u, in.delta, in.b, in.c, a, d))
                         .cwiseAbs()
                         .maxCoeff();
        worst = std::max(worst, err);
    }
    c.expect(worst < 1e-6, "worst oracle deviation " + std::to_string(worst));

    ScanInputs cum;
    cum.u = Matrix(3, 1);
    cum.u << 1, 2, 3;
    cum.delta = Matrix::Ones(3, 1);
    cum.b = Matrix::Ones(3, 1);
    cum.c = Matrix::Ones(3, 1);
    Matrix y = selective_scan(cum, Matrix::Zero(1, 1), Vector::Zero(1));
    c.expect(y(0, 0) == 1.0 && y(1, 0) == 3.0 && y(2, 0) == 6.0, "cumulative-sum case");
    report(2, "selective-scan oracle equivalence (200 instances)", c.ok,
           c.ok ? "max deviation " + format_sig4(worst) + ", cumsum exact" : c.detail.str());
}

// ---- criterion 3: gradient checks ------------------------------------------

void criterion_gradients() {
    Check c;
    Rng rng(7);
    double worst_scan = 0, worst_regress = 0;
    const double eps = 1e-6;

    for (int trial = 0; trial < 20; ++trial) {
        ScanInputs in;
        in.u = random_matrix(rng, 8, 2);
        in.delta = random_matrix(rng, 8, 2).array().abs() + 0.05;
        in.b = random_matrix(rng, 8, 2);
        in.c = random_matrix(rng, 8, 2);
        Matrix a = (-random_matrix(rng, 2, 2).cwiseAbs().array() - 0.1).matrix();
        Vector d = random_matrix(rng, 2, 1);

        ad::Var vu = ad::leaf(in.u), vdl = ad::leaf(in.delta), vb = ad::leaf(in.b);
        ad::Var vc = ad::leaf(in.c), va = ad::leaf(a), vd = ad::leaf(d);
        ad::Var loss = ad::sum(ad::mul(ad::selective_scan(vu, vdl, vb, vc, va, vd),
                                       ad::selective_scan(vu, vdl, vb, vc, va, vd)));
        ad::backward(loss);

        auto loss_of = [&] {
            Matrix y = selective_scan(in, a, d);
            return (y.array() * y.array()).sum();
        };
        auto fd_check = [&](Matrix& target, const Matrix& analytic) {
            for (Eigen::Index i = 0; i < target.rows(); ++i)
                for (Eigen::Index j = 0; j < target.cols(); ++j) {
                    const double orig = target(i, j);
                    target(i, j) = orig + eps;
                    double fp = loss_of();
                    target(i, j) = orig - eps;
                    double fm = loss_of();
                    target(i, j) = orig;
                    double fd = (fp - fm) / (2 * eps);
                    worst_scan = std::max(
                        worst_scan, std::abs(fd - analytic(i, j)) / std::max(1.0, std::abs(fd)));
                }
        };
        fd_check(in.u, vu.grad());
        fd_check(in.delta, vdl.grad());
        fd_check(in.b, vb.grad());
        fd_check(in.c, vc.grad());
        fd_check(a, va.grad());

        // soft-argmax regression: d(sum V)/d(scores)
        CandidateSet cands = build_candidates(32, 8, 1.0);
        Matrix scores = random_matrix(rng, 5, cands.count());
        ad::Var vs = ad::leaf(scores);
        ad::backward(ad::sum(soft_regress_graph(vs, cands)));
        Matrix analytic = vs.grad();
        for (Eigen::Index i = 0; i < scores.rows(); ++i)
            for (Eigen::Index j = 0; j < scores.cols(); ++j) {
                const double orig = scores(i, j);
                auto eval = [&] {
                    return soft_regress(CostVolume::from_scores(scores), cands).sum();
                };
                scores(i, j) = orig + eps;
                double fp = eval();
                scores(i, j) = orig - eps;
                double fm = eval();
                scores(i, j) = orig;
                double fd = (fp - fm) / (2 * eps);
                worst_regress = std::max(
                    worst_regress, std::abs(fd - analytic(i, j)) / std::max(1.0, std::abs(fd)));
            }
    }
    c.expect(worst_scan < 1e-4, "scan gradient error " + std::to_string(worst_scan));
    c.expect(worst_regress < 1e-4, "regression gradient error " + std::to_string(worst_regress));
    report(3, "finite-difference gradient checks", c.ok,
           c.ok ? "scan " + format_sig4(worst_scan) + ", soft-argmax " + format_sig4(worst_regress)
                : c.detail.str());
}

// ---- criterion 4: architecture contracts -----------------------------------

void criterion_architecture() {
    Check c;
    Rng rng(4);

    {  // residual identity with zero-weight layers
        SSMParams fwd = SSMParams::init(8, 2, 4, 2, rng), bwd = SSMParams::init(8, 2, 4, 2, rng);
        fwd.w_out.setZero();
        bwd.w_out.setZero();
        Matrix x = random_matrix(rng, 10, 8), out = x;
        for (int l = 0; l < 6; ++l) out = bidirectional_layer(out, fwd, bwd) + out;
        c.expect((out - x).cwiseAbs().maxCoeff() < 1e-12, "zero-weight residual identity");
    }
    {  // concat / split round trip and ordering
        TokenSequence l{random_matrix(rng, 16, 4), 4, 4, 8}, r{random_matrix(rng, 16, 4), 4, 4, 8};
        auto [fwd, rev] = concat_symmetric(l, r);
        auto [sl, sr] = split_even(fwd);
        auto [rr, rl] = split_even(rev);
        c.expect(sl.tokens == l.tokens && sr.tokens == r.tokens, "split inverts concat");
        c.expect(rr.tokens == r.tokens && rl.tokens == l.tokens, "reversed ordering");
    }
    {  // tied reversal symmetry
        SSMParams p = SSMParams::init(8, 2, 4, 2, rng);
        Matrix x = random_matrix(rng, 6, 8);
        Matrix a = bidirectional_layer(Matrix(x.colwise().reverse()), p, p);
        Matrix b = bidirectional_layer(x, p, p).colwise().reverse();
        c.expect((a - b).cwiseAbs().maxCoeff() < 1e-10, "tied reversal symmetry");
    }
    {  // matching distribution rows sum to one
        CostVolume v = CostVolume::from_scores(random_matrix(rng, 20, 9));
        c.expect((v.distribution.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6,
                 "row-stochastic matching distribution");
    }
    {  // six-layer count and output bounds on a small end-to-end model
        ModelConfig cfg;
        cfg.model_dim = 16;
        cfg.state_dim = 2;
        cfg.max_disparity = 32;
        VimStereoModel model(cfg, 1);
        StereoSample s = gen_synthetic(48, 24, {{4.0, 0, 48}}, 2);
        DisparityMap pred = model.forward(s.left, s.right);
        c.expect(model.last_stats().layer_applications == 6, "six layer applications");
        c.expect(model.last_stats().stack_traversals == 1, "single traversal");
        c.expect(pred.values.minCoeff() >= 0.0 && pred.values.maxCoeff() <= cfg.max_disparity,
                 "output within [0, D_max]");
        cfg.passes = 2;
        VimStereoModel two(cfg, 1);
        two.forward(s.left, s.right);
        c.expect(two.last_stats().stack_traversals == 2, "passes=2 doubles traversals");
    }
    report(4, "architecture-equation contracts", c.ok, c.ok ? "all contracts hold" : c.detail.str());
}

// ---- criterion 5: synthetic overfit ----------------------------------------

VimStereoModel* g_trained = nullptr;  // reused by the ablation criterion

void criterion_overfit() {
    Check c;
    ModelConfig cfg;
    cfg.model_dim = 64;
    cfg.state_dim = 4;
    cfg.max_disparity = 64;
    static VimStereoModel model(cfg, 3);
    std::vector<StereoSample> suite = synthetic_suite(128, 64, 1);

    AdamW opt;
    opt.lr = 1e-3;
    Rng rng(5);
    std::uniform_int_distribution<std::size_t> pick(0, suite.size() - 1);
    const int batch = 2, factor = cfg.upsample_factor;
    const long max_iters = 2000;
    long used = 0;
    std::map<std::string, Matrix> acc;
    EvalResult res;
    for (long it = 0; it < max_iters; ++it) {
        acc.clear();
        for (int k = 0; k < batch; ++k) {
            const StereoSample& s = suite[pick(rng)];
            auto result = model.forward_graph(s.left, s.right, true);
            ad::backward(disparity_loss(result, *s.gt_disparity, factor));
            model.params().collect_grads();
            for (auto& [name, e] : model.params().entries()) {
                auto [ia, fresh] = acc.try_emplace(name, e.grad);
                if (!fresh) ia->second += e.grad;
            }
        }
        for (auto& [name, e] : model.params().entries()) e.grad = acc.at(name) / batch;
        opt.step(model.params());
        used = it + 1;
        if (used % 25 == 0) {  // stop once the whole suite is comfortably under the bar
            res = eval_model(model, suite);
            if (res.epe < 0.9 && res.d1 < 0.04) break;
        }
    }

    if (used % 25 != 0) res = eval_model(model, suite);
    c.expect(used <= max_iters, "iteration budget");
    c.expect(res.epe < 1.0, "suite EPE " + std::to_string(res.epe));
    c.expect(res.d1 < 0.05, "suite D1 " + std::to_string(res.d1));

    double prev = -1;
    bool monotone = true;
    for (double shift : {4.0, 8.0, 16.0}) {
        StereoSample s = gen_synthetic(128, 64, {{shift, 0, 128}}, 77);
        double mean = model.forward(s.left, s.right).values.mean();
        monotone = monotone && mean > prev;
        prev = mean;
    }
    c.expect(monotone, "mean disparity not monotone over shifts {4,8,16}");

    g_trained = &model;
    report(5, "synthetic overfit at desk scale", c.ok,
           c.ok ? std::to_string(used) + " iters, EPE " + format_sig4(res.epe) + ", D1 " +
                      format_sig4(res.d1) + ", monotone in shift"
                : c.detail.str() + " (after " + std::to_string(used) + " iters)");
}

// ---- criterion 6: metric hand cases ----------------------------------------

DisparityMap row_map(std::initializer_list<double> values) {
    Matrix m(1, static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) m(0, i++) = v;
    return DisparityMap::dense(m);
}

void criterion_metrics() {
    Check c;
    c.expect(std::abs(epe(row_map({1, 3}), row_map({0, 0})) - 2.0) < 1e-12, "EPE {1,3} = 2");
    c.expect(std::abs(d1(row_map({0, 2, 4, 10}), row_map({0, 0, 0, 0})) - 0.5) < 1e-12,
             "D1 {0,2,4,10} = 0.5");
    c.expect(d1(row_map({3, 0}), row_map({0, 0})) == 0.0, "error 3.0 not counted");
    DisparityMap gt = row_map({0, 0, 0});
    gt.valid(0, 2) = 0;
    c.expect(std::abs(epe(row_map({1, 3, 100}), gt) - 2.0) < 1e-12, "mask respected");
    report(6, "metric hand cases", c.ok, c.ok ? "EPE/D1 exact" : c.detail.str());
}

// ---- criterion 7: FPS protocol ---------------------------------------------

void spin_for(double seconds) {
    auto t0 = std::chrono::steady_clock::now();
    while (std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < seconds) {
    }
}

// stand-in model with a precise, deterministic per-frame cost
struct StubModel {
    double seconds;
    DisparityMap forward(const ImageTensor& left, const ImageTensor&) {
        spin_for(seconds);
        return DisparityMap::dense(Matrix::Zero(left.h, left.w));
    }
};

void criterion_fps() {
    Check c;
    std::vector<int> frames{0, 1, 2, 3, 4};
    FpsStats s = measure_fps([](int) { spin_for(0.1); }, frames);
    c.expect(std::abs(s.avg - 10.0) <= 0.5, "stub avg " + std::to_string(s.avg));
    c.expect(s.min <= s.avg && s.avg <= s.max, "min <= avg <= max");

    // loader sleep injected at the metrics API (dereference happens untimed);
    // per-frame min/max figures are one-sample statistics, so allow a bounded
    // number of re-measurements to ride out scheduler hiccups
    struct SlowRange {
        struct It {
            int i;
            bool operator!=(const It& o) const { return i != o.i; }
            void operator++() { ++i; }
            int operator*() const {
                std::this_thread::sleep_for(std::chrono::seconds(1));
                return i;
            }
        };
        It begin() const { return {0}; }
        It end() const { return {2}; }
    };
    auto all_within = [](const FpsStats& x, const FpsStats& y, double tol) {
        return std::abs(x.avg - y.avg) / y.avg <= tol && std::abs(x.min - y.min) / y.min <= tol &&
               std::abs(x.max - y.max) / y.max <= tol;
    };
    bool api_ok = false;
    for (int attempt = 0; attempt < 3 && !api_ok; ++attempt) {
        FpsStats fast = measure_fps([](int) { spin_for(0.5); }, std::vector<int>{0, 1});
        FpsStats slow = measure_fps([](int) { spin_for(0.5); }, SlowRange{});
        api_ok = all_within(slow, fast, 0.01);
    }
    c.expect(api_ok, "api loader-sleep figures moved > 1%");

    // end to end through the benchmark driver
    std::vector<StereoSample> samples = synthetic_suite(32, 16, 2);
    StubModel slow_stub{0.5};
    BenchOptions opts;
    opts.loader_hook = [](std::size_t) { std::this_thread::sleep_for(std::chrono::seconds(1)); };
    bool bench_ok = false;
    for (int attempt = 0; attempt < 3 && !bench_ok; ++attempt) {
        BenchRecord plain = bench_dataset(slow_stub, "stub", "synthetic", samples);
        BenchRecord hooked = bench_dataset(slow_stub, "stub", "synthetic", samples, opts);
        FpsStats p{plain.fps_min, plain.fps_avg, plain.fps_max};
        FpsStats h{hooked.fps_min, hooked.fps_avg, hooked.fps_max};
        bench_ok = all_within(h, p, 0.01) && std::abs(plain.fps_avg - 2.0) <= 0.1;
    }
    c.expect(bench_ok, "bench loader-sleep figures moved > 1%");
    report(7, "FPS protocol excludes I/O", c.ok,
           c.ok ? "stub " + format_sig4(s.avg) + " FPS, loader sleep invisible (api + bench)"
                : c.detail.str());
}

// ---- criterion 8: ablation directionality ----------------------------------

void criterion_ablation() {
    Check c;
    if (!g_trained) {
        report(8, "ablation FPS directionality", false, "no trained model available");
        return;
    }
    std::vector<StereoSample> samples = synthetic_suite(128, 64, 9);
    AblationResult res = run_ablation(
        [&](int variant) { return g_trained->variant(ablation_config(g_trained->config(), variant)); },
        "synthetic", samples);
    const BenchRecord& one_pass_sa = res.records[0];
    const BenchRecord& two_pass = res.records[1];
    const BenchRecord& proposed = res.records[2];
    c.expect(two_pass.fps_avg < one_pass_sa.fps_avg,
             "2-pass not slower than 1-pass (" + format_sig4(two_pass.fps_avg) + " vs " +
                 format_sig4(one_pass_sa.fps_avg) + ")");

    // toggling self-attention on the proposed configuration; warmed-up,
    // back-to-back measurements so allocator cold-start does not masquerade
    // as attention cost
    VimStereoModel prop_model = g_trained->variant(ablation_config(g_trained->config(), 2));
    ModelConfig with_sa = g_trained->config();
    with_sa.self_attention = true;
    VimStereoModel sa_model = g_trained->variant(with_sa);
    prop_model.forward(samples[0].left, samples[0].right);
    sa_model.forward(samples[0].left, samples[0].right);
    FpsStats f_prop = measure_fps(
        [&](const StereoSample& s) { prop_model.forward(s.left, s.right); }, samples);
    FpsStats f_sa =
        measure_fps([&](const StereoSample& s) { sa_model.forward(s.left, s.right); }, samples);
    double sa_delta = std::abs(f_sa.avg - f_prop.avg) / f_prop.avg;
    c.expect(sa_delta < 0.15, "SA changes FPS by " + format_sig4(100 * sa_delta) + "%");
    report(8, "ablation FPS directionality", c.ok,
           c.ok ? "FPS 1-pass+SA " + format_sig4(one_pass_sa.fps_avg) + " / 2-pass " +
                      format_sig4(two_pass.fps_avg) + " / proposed " +
                      format_sig4(proposed.fps_avg) + ", SA delta " +
                      format_sig4(100 * sa_delta) + "%"
                : c.detail.str());
}

// ---- criterion 9: format golden tests --------------------------------------

// 3x2 16-bit grayscale PNG built independently of the library writer:
// row 0 = [0, 256, 512], row 1 = [65535, 128, 1]
const unsigned char kGoldenPng[] = {
    137, 80, 78, 71, 13, 10, 26, 10, 0, 0, 0, 13, 73, 72, 68, 82, 0, 0, 0, 3, 0, 0, 0, 2,
    16, 0, 0, 0, 0, 232, 143, 229, 133, 0, 0, 0, 22, 73, 68, 65, 84, 120, 156, 99, 96, 96,
    96, 100, 96, 98, 96, 248, 255, 159, 161, 129, 129, 17, 0, 12, 161, 2, 131, 163, 227, 19,
    78, 0, 0, 0, 0, 73, 69, 78, 68, 174, 66, 96, 130};

void criterion_formats() {
    Check c;
    fs::path dir = fs::temp_directory_path() / ("vimd_accept_" + std::to_string(::getpid()));
    fs::create_directories(dir);

    {  // KITTI PNG golden decode
        std::ofstream f((dir / "golden.png").string(), std::ios::binary);
        f.write(reinterpret_cast<const char*>(kGoldenPng), sizeof(kGoldenPng));
        f.close();
        DisparityMap m = load_kitti_disparity((dir / "golden.png").string());
        c.expect(m.valid(0, 0) == 0, "stored 0 invalid");
        c.expect(m.values(0, 1) == 1.0, "stored 256 -> 1.0 px");
        c.expect(m.values(1, 1) == 0.5, "stored 128 -> 0.5 px");
        c.expect(m.values(1, 0) == 65535.0 / 256.0, "max value");
    }
    {  // KITTI round trip at exact 1/256 quanta
        DisparityMap m = DisparityMap::dense(Matrix::Zero(2, 3));
        m.values << 1.0, 0.25, 191.5, 0.00390625, 64.0, 3.0;
        m.valid(1, 2) = 0;
        save_kitti_disparity((dir / "rt.png").string(), m);
        DisparityMap back = load_kitti_disparity((dir / "rt.png").string());
        bool exact = true;
        for (int r = 0; r < 2; ++r)
            for (int col = 0; col < 3; ++col) {
                exact = exact && back.valid(r, col) == m.valid(r, col);
                if (m.valid(r, col)) exact = exact && back.values(r, col) == m.values(r, col);
            }
        c.expect(exact, "KITTI round trip bit-exact on 1/256 quanta");
    }
    {  // PFM golden fixtures
        std::ofstream f((dir / "one.pfm").string(), std::ios::binary);
        f << "Pf\n1 1\n-1.0\n";
        float v = 2.5f;
        f.write(reinterpret_cast<const char*>(&v), 4);
        f.close();
        PfmImage img = load_pfm((dir / "one.pfm").string());
        c.expect(img.channels() == 1 && img.planes[0](0, 0) == 2.5, "Pf little-endian fixture");

        std::ofstream g((dir / "be.pfm").string(), std::ios::binary);
        g << "Pf\n1 1\n1.0\n";
        unsigned char be[4] = {0x40, 0x20, 0x00, 0x00};  // 2.5f big-endian
        g.write(reinterpret_cast<const char*>(be), 4);
        g.close();
        c.expect(load_pfm((dir / "be.pfm").string()).planes[0](0, 0) == 2.5,
                 "positive scale selects big-endian");

        std::ofstream h((dir / "color.pfm").string(), std::ios::binary);
        h << "PF\n2 2\n-1.0\n";
        float bottom[6] = {1, 2, 3, 4, 5, 6}, top[6] = {7, 8, 9, 10, 11, 12};
        h.write(reinterpret_cast<const char*>(bottom), 24);
        h.write(reinterpret_cast<const char*>(top), 24);
        h.close();
        PfmImage color = load_pfm((dir / "color.pfm").string());
        c.expect(color.channels() == 3 && color.planes[0](0, 0) == 7.0 &&
                     color.planes[0](1, 0) == 1.0,
                 "PF bottom-up row flip");
    }
    {  // PFM round trip
        Rng rng(6);
        Matrix plane = random_matrix(rng, 4, 6).unaryExpr(
            [](double v) { return static_cast<double>(static_cast<float>(v)); });
        save_pfm((dir / "rt.pfm").string(), plane);
        c.expect((load_pfm((dir / "rt.pfm").string()).planes[0] - plane).cwiseAbs().maxCoeff() ==
                     0.0,
                 "PFM round trip exact");
    }
    fs::remove_all(dir);
    report(9, "on-disk format golden tests", c.ok, c.ok ? "KITTI and PFM fixtures exact" : c.detail.str());
}

// ---- criterion 10: rectified geometry --------------------------------------

void criterion_geometry() {
    Check c;
    const double f = 725.0, baseline = 0.54;
    CameraPair cams;
    cams.view1.k << f, 0, 620, 0, f, 187, 0, 0, 1;
    cams.view2.k = cams.view1.k;
    cams.view2.e(0, 3) = -baseline;

    // candidate disparities map to depths; projection must shift by exactly d
    double worst = 0;
    CandidateSet cands = build_candidates(192, 1, 8.0);
    for (int i = 0; i < cands.count(); ++i) {
        double d = cands.values(i);
        if (d <= 0) continue;
        double depth = f * baseline / d;
        Projection p = homography_project({620.0, 187.0}, depth, cams);
        worst = std::max(worst, std::abs((620.0 - p.point.x()) - d));
        worst = std::max(worst, std::abs(p.point.y() - 187.0));
    }
    c.expect(worst < 1e-4, "candidate shift deviation " + std::to_string(worst));

    Rng rng(10);
    std::uniform_real_distribution<double> uf(200, 1500), ub(0.1, 1.0), ud(1.0, 80.0);
    double worst_fbd = 0;
    for (int i = 0; i < 50; ++i) {
        const double fi = uf(rng), bi = ub(rng), di = ud(rng);
        CameraPair p;
        p.view1.k << fi, 0, 300, 0, fi, 200, 0, 0, 1;
        p.view2.k = p.view1.k;
        p.view2.e(0, 3) = -bi;
        Projection pr = homography_project({300.0, 200.0}, di, p);
        worst_fbd = std::max(worst_fbd, std::abs((300.0 - pr.point.x()) - fi * bi / di));
        worst_fbd = std::max(worst_fbd, std::abs(pr.point.y() - 200.0));
    }
    c.expect(worst_fbd < 1e-4, "f*b/d deviation " + std::to_string(worst_fbd));
    report(10, "rectified-geometry consistency", c.ok,
           c.ok ? "shift deviation " + format_sig4(worst) + ", f*b/d deviation " +
                      format_sig4(worst_fbd)
                : c.detail.str());
}

}  // namespace

int main() {
    criterion_somer();
    criterion_scan_oracle();
    criterion_gradients();
    criterion_architecture();
    criterion_overfit();
    criterion_metrics();
    criterion_fps();
    criterion_ablation();
    criterion_formats();
    criterion_geometry();
    std::printf("%s: %d of 10 criteria passed\n", g_failures == 0 ? "ACCEPTED" : "REJECTED",
                10 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
