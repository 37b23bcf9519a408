#pragma once

// Benchmark drivers: per-dataset measurement records, Markdown report
// tables, the ablation matrix and the advisory device lock. Frame timing
// brackets the disparity call only; loading stays outside the clock.

#include "vimd/core.hpp"
#include "vimd/data.hpp"
#include "vimd/metrics.hpp"
#include "vimd/model.hpp"

#include <sys/file.h>
#include <unistd.h>
#include <fcntl.h>

#include <chrono>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

namespace vimd {

// The desk-scale verification suite: constant-shift planes plus one
// two-plane scene with an occlusion band.
inline std::vector<StereoSample> synthetic_suite(int width = 128, int height = 64,
                                                 unsigned seed = 1) {
    std::vector<StereoSample> samples;
    int id = 0;
    for (double shift : {0.0, 2.0, 4.0, 6.0, 8.0, 12.0, 16.0}) {
        samples.push_back(
            gen_synthetic(width, height, {{shift, 0, width}}, seed + static_cast<unsigned>(id)));
        samples.back().frame_id = "const_" + std::to_string(static_cast<int>(shift));
        ++id;
    }
    samples.push_back(gen_synthetic(
        width, height, {{12.0, 0, width / 2}, {4.0, width / 2, width}}, seed + 100));
    samples.back().frame_id = "two_plane_12_4";
    return samples;
}

struct EvalResult {
    double epe = 0, d1 = 0;
    long pairs = 0;
};

inline EvalResult eval_model(VimStereoModel& model, const std::vector<StereoSample>& samples) {
    EvalResult res;
    double epe_sum = 0, d1_sum = 0;
    for (const auto& s : samples) {
        if (!s.gt_disparity) continue;
        DisparityMap pred = model.forward(s.left, s.right);
        epe_sum += epe(pred, *s.gt_disparity);
        d1_sum += d1(pred, *s.gt_disparity);
        ++res.pairs;
    }
    require(res.pairs > 0, "eval: no samples with ground truth");
    res.epe = epe_sum / static_cast<double>(res.pairs);
    res.d1 = d1_sum / static_cast<double>(res.pairs);
    return res;
}

struct BenchOptions {
    // invoked per frame outside the timed region; stands in for I/O work
    std::function<void(std::size_t)> loader_hook;
};

template <typename Model>
BenchRecord bench_dataset(Model& model, const std::string& model_id,
                          const std::string& dataset_id,
                          const std::vector<StereoSample>& samples,
                          const BenchOptions& opts = {}) {
    require(!samples.empty(), "bench: no samples");
    using clock = std::chrono::steady_clock;
    BenchRecord rec;
    rec.dataset_id = dataset_id;
    rec.model_id = model_id;

    rec.mem_mib = measure_peak_memory([&] { model.forward(samples[0].left, samples[0].right); });

    double total = 0, fmin = std::numeric_limits<double>::infinity(), fmax = 0;
    double epe_sum = 0, d1_sum = 0;
    long with_gt = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (opts.loader_hook) opts.loader_hook(i);  // untimed, mirrors data loading
        const StereoSample& s = samples[i];
        auto t0 = clock::now();
        DisparityMap pred = model.forward(s.left, s.right);
        auto t1 = clock::now();
        double dt = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
        total += dt;
        fmin = std::min(fmin, 1.0 / dt);
        fmax = std::max(fmax, 1.0 / dt);
        if (s.gt_disparity) {
            epe_sum += epe(pred, *s.gt_disparity);
            d1_sum += d1(pred, *s.gt_disparity);
            ++with_gt;
        }
    }
    rec.fps_min = fmin;
    rec.fps_avg = static_cast<double>(samples.size()) / total;
    rec.fps_max = fmax;
    if (with_gt > 0) {
        rec.epe = epe_sum / static_cast<double>(with_gt);
        rec.d1 = d1_sum / static_cast<double>(with_gt);
        if (rec.epe > 0 && rec.mem_mib > 1) rec.somer = somer(rec.fps_avg, rec.epe, rec.mem_mib);
    }
    return rec;
}

// report-only path: recompute SOMER from recorded (fps, epe, mem) triples
inline std::vector<BenchRecord> report_from_components(const std::string& csv_text) {
    std::istringstream in(csv_text);
    std::string line;
    require(std::getline(in, line) && line == "dataset,model,epe,fps,mem",
            "report csv: expected header dataset,model,epe,fps,mem");
    std::vector<BenchRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream s(line);
        std::string dataset, model, f;
        std::getline(s, dataset, ',');
        std::getline(s, model, ',');
        BenchRecord r;
        r.dataset_id = dataset;
        r.model_id = model;
        std::getline(s, f, ',');
        r.epe = std::stod(f);
        std::getline(s, f, ',');
        r.fps_avg = r.fps_min = r.fps_max = std::stod(f);
        std::getline(s, f, ',');
        r.mem_mib = std::stod(f);
        if (r.epe > 0 && r.mem_mib > 1) r.somer = somer(r.fps_avg, r.epe, r.mem_mib);
        records.push_back(std::move(r));
    }
    return records;
}

// ---- Markdown reports ------------------------------------------------------

inline std::string markdown_bench_table(const std::vector<BenchRecord>& records) {
    std::ostringstream out;
    out << "| Dataset | Metric | Value |\n|---|---|---|\n";
    auto row = [&](const std::string& ds, const char* metric, double v) {
        out << "| " << ds << " | " << metric << " | " << format_sig4(v) << " |\n";
    };
    for (const auto& r : records) {
        row(r.dataset_id, "EPE", r.epe);
        row(r.dataset_id, "D1", r.d1);
        row(r.dataset_id, "FPS", r.fps_avg);
        row(r.dataset_id, "MEM", r.mem_mib);
        row(r.dataset_id, "SOMER", r.somer);
    }
    out << "\n| Dataset |  | FPS |\n|---|---|---|\n";
    for (const auto& r : records) {
        out << "| " << r.dataset_id << " | min | " << format_sig4(r.fps_min) << " |\n";
        out << "| " << r.dataset_id << " | avg | " << format_sig4(r.fps_avg) << " |\n";
        out << "| " << r.dataset_id << " | max | " << format_sig4(r.fps_max) << " |\n";
    }
    return out.str();
}

// ---- ablation --------------------------------------------------------------

struct AblationResult {
    std::vector<BenchRecord> records;  // 1-pass+SA, 2-pass-SA, proposed, in that order
};

inline const char* kAblationLabels[3] = {"Model w 1-pass w SA", "Model w 2-pass w/o SA",
                                         "Proposed model"};

template <typename ModelFactory>
AblationResult run_ablation(ModelFactory&& make_model, const std::string& dataset_id,
                            const std::vector<StereoSample>& samples) {
    AblationResult out;
    for (int variant = 0; variant < 3; ++variant) {
        VimStereoModel model = make_model(variant);
        out.records.push_back(bench_dataset(model, kAblationLabels[variant], dataset_id, samples));
    }
    return out;
}

// Applies the Table-III style deltas onto a base config.
inline ModelConfig ablation_config(const ModelConfig& base, int variant) {
    ModelConfig cfg = base;
    switch (variant) {
        case 0:  // 1-pass with self-attention: forward-order sequence only
            cfg.passes = 1;
            cfg.dual_sequence = false;
            cfg.self_attention = true;
            break;
        case 1:  // 2-pass without self-attention: two sequential traversals
            cfg.passes = 2;
            cfg.dual_sequence = true;
            cfg.self_attention = false;
            break;
        default:  // proposed: both sequences in one traversal
            cfg.passes = 1;
            cfg.dual_sequence = true;
            cfg.self_attention = false;
            break;
    }
    return cfg;
}

inline std::string markdown_ablation_table(const AblationResult& res) {
    std::ostringstream out;
    out << "| Metric |";
    for (const auto& r : res.records) out << " " << r.model_id << " |";
    out << "\n|---|---|---|---|\n";
    auto row = [&](const char* metric, auto getter) {
        out << "| " << metric << " |";
        for (const auto& r : res.records) out << " " << format_sig4(getter(r)) << " |";
        out << "\n";
    };
    row("EPE", [](const BenchRecord& r) { return r.epe; });
    row("D1", [](const BenchRecord& r) { return r.d1; });
    row("FPS", [](const BenchRecord& r) { return r.fps_avg; });
    return out.str();
}

// Advisory per-device lock honoring the no-concurrent-benchmarks contract.
class DeviceLock {
public:
    explicit DeviceLock(const std::string& device) {
        path_ = "/tmp/vimd-bench-" + (device.empty() ? "cpu" : device) + ".lock";
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        require(fd_ >= 0, "device lock: cannot open " + path_);
        require(::flock(fd_, LOCK_EX) == 0, "device lock: flock failed on " + path_);
    }
    ~DeviceLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }
    DeviceLock(const DeviceLock&) = delete;
    DeviceLock& operator=(const DeviceLock&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

}  // namespace vimd
