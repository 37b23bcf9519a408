#pragma once

// EPE, D1, the I/O-excluded FPS protocol, peak-memory probing, SOMER and
// the benchmark record table. Timing and memory probes must not run
// concurrently with other benchmarks in the same process.

#include "vimd/core.hpp"

#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace vimd {

struct DisparityMap {
    Matrix values;     // H x W, pixels
    MaskMatrix valid;  // H x W

    static DisparityMap dense(Matrix v) {
        DisparityMap m;
        m.valid = MaskMatrix::Ones(v.rows(), v.cols());
        m.values = std::move(v);
        return m;
    }

    Eigen::Index height() const { return values.rows(); }
    Eigen::Index width() const { return values.cols(); }
};

namespace detail {

inline void check_pair(const DisparityMap& pred, const DisparityMap& gt) {
    require_dims(pred.values.rows() == gt.values.rows() && pred.values.cols() == gt.values.cols(),
                 "metric: prediction and ground truth shapes differ");
    require(gt.valid.cast<int>().sum() > 0, "metric: ground-truth mask is empty");
}

}  // namespace detail

inline double epe(const DisparityMap& pred, const DisparityMap& gt) {
    detail::check_pair(pred, gt);
    double acc = 0.0;
    long n = 0;
    for (Eigen::Index i = 0; i < gt.values.rows(); ++i)
        for (Eigen::Index j = 0; j < gt.values.cols(); ++j)
            if (gt.valid(i, j)) {
                acc += std::abs(pred.values(i, j) - gt.values(i, j));
                ++n;
            }
    return acc / static_cast<double>(n);
}

// fraction of valid pixels with error strictly greater than the threshold
inline double d1(const DisparityMap& pred, const DisparityMap& gt, double threshold = 3.0) {
    detail::check_pair(pred, gt);
    long over = 0, n = 0;
    for (Eigen::Index i = 0; i < gt.values.rows(); ++i)
        for (Eigen::Index j = 0; j < gt.values.cols(); ++j)
            if (gt.valid(i, j)) {
                if (std::abs(pred.values(i, j) - gt.values(i, j)) > threshold) ++over;
                ++n;
            }
    return static_cast<double>(over) / static_cast<double>(n);
}

struct FpsStats {
    double min = 0, avg = 0, max = 0;
};

// Wall time strictly around the model call; loading and writing are the
// caller's business and never enter the measurement.
template <typename Fn, typename FrameRange>
FpsStats measure_fps(Fn&& model_fn, const FrameRange& frames) {
    require(std::begin(frames) != std::end(frames), "measure_fps: need at least one frame");
    using clock = std::chrono::steady_clock;
    double total = 0.0;
    double fmin = std::numeric_limits<double>::infinity(), fmax = 0.0;
    long n = 0;
    for (const auto& frame : frames) {
        auto t0 = clock::now();
        model_fn(frame);
        auto t1 = clock::now();
        double dt = std::chrono::duration<double>(t1 - t0).count();
        if (dt <= 0.0) {
            std::cerr << "measure_fps: zero measured time, clamping to clock resolution\n";
            dt = 1e-9;
        }
        total += dt;
        fmin = std::min(fmin, 1.0 / dt);
        fmax = std::max(fmax, 1.0 / dt);
        ++n;
    }
    return FpsStats{fmin, static_cast<double>(n) / total, fmax};
}

namespace detail {

inline long read_status_kib(const char* key) {
    std::ifstream f("/proc/self/status");
    std::string line;
    const std::string prefix = std::string(key) + ":";
    while (std::getline(f, line))
        if (line.rfind(prefix, 0) == 0) return std::stol(line.substr(prefix.size()));
    return -1;
}

inline void reset_peak_rss() {
    std::ofstream f("/proc/self/clear_refs");
    f << "5";
    if (!f) throw UnsupportedError("memory probe: cannot reset peak RSS via /proc/self/clear_refs");
}

}  // namespace detail

// Peak resident-set growth attributable to one call, in MiB.
template <typename Fn>
double measure_peak_memory(Fn&& fn) {
    malloc_trim(0);
    detail::reset_peak_rss();
    long base = detail::read_status_kib("VmHWM");
    if (base < 0) throw UnsupportedError("memory probe: /proc/self/status unavailable");
    fn();
    long peak = detail::read_status_kib("VmHWM");
    return static_cast<double>(peak - base) / 1024.0;
}

template <typename Fn, typename Frame>
double measure_memory(Fn&& model_fn, const Frame& frame) {
    return measure_peak_memory([&] { model_fn(frame); });
}

// SOMER = FPS / (EPE * ln(MEM)); natural log, verified against the
// published benchmark tables.
inline double somer(double fps, double epe_px, double mem_mib) {
    require(fps >= 0, "somer: fps must be non-negative");
    require(epe_px > 0, "somer: undefined for zero error");
    require(mem_mib > 1, "somer: undefined for memory <= 1 MiB");
    return fps / (epe_px * std::log(mem_mib));
}

// ---- benchmark records -----------------------------------------------------

struct BenchRecord {
    std::string dataset_id;
    std::string model_id;
    double epe = std::numeric_limits<double>::quiet_NaN();
    double d1 = std::numeric_limits<double>::quiet_NaN();
    double fps_min = 0, fps_avg = 0, fps_max = 0;
    double mem_mib = std::numeric_limits<double>::quiet_NaN();
    double somer = std::numeric_limits<double>::quiet_NaN();
};

inline const char* kBenchCsvHeader = "dataset,model,epe,d1,fps_min,fps_avg,fps_max,mem_mib,somer";

inline std::string format_sig4(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

inline std::string to_csv(const std::vector<BenchRecord>& records) {
    std::ostringstream out;
    out << kBenchCsvHeader << "\n";
    for (const auto& r : records)
        out << r.dataset_id << ',' << r.model_id << ',' << format_sig4(r.epe) << ','
            << format_sig4(r.d1) << ',' << format_sig4(r.fps_min) << ',' << format_sig4(r.fps_avg)
            << ',' << format_sig4(r.fps_max) << ',' << format_sig4(r.mem_mib) << ','
            << format_sig4(r.somer) << "\n";
    return out.str();
}

inline std::vector<BenchRecord> from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(std::getline(in, line) && line == kBenchCsvHeader, "bench csv: bad header");
    std::vector<BenchRecord> records;
    auto field = [](std::istringstream& s) {
        std::string f;
        std::getline(s, f, ',');
        return f;
    };
    auto num = [](const std::string& f) {
        return f.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f);
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream s(line);
        BenchRecord r;
        r.dataset_id = field(s);
        r.model_id = field(s);
        r.epe = num(field(s));
        r.d1 = num(field(s));
        r.fps_min = num(field(s));
        r.fps_avg = num(field(s));
        r.fps_max = num(field(s));
        r.mem_mib = num(field(s));
        r.somer = num(field(s));
        records.push_back(std::move(r));
    }
    return records;
}

// Per-dataset rows followed by an "All datasets" row that averages the
// components and recomputes SOMER from the averages.
inline std::vector<BenchRecord> aggregate(const std::vector<BenchRecord>& records) {
    require(!records.empty(), "aggregate: no records");
    std::vector<BenchRecord> out = records;
    BenchRecord all;
    all.dataset_id = "All datasets";
    all.model_id = records.front().model_id;
    double epe_sum = 0, d1_sum = 0, mem_sum = 0, fps_sum = 0;
    long n_err = 0;
    all.fps_min = std::numeric_limits<double>::infinity();
    all.fps_max = 0;
    for (const auto& r : records) {
        fps_sum += r.fps_avg;
        all.fps_min = std::min(all.fps_min, r.fps_min);
        all.fps_max = std::max(all.fps_max, r.fps_max);
        mem_sum += r.mem_mib;
        if (!std::isnan(r.epe)) {
            epe_sum += r.epe;
            d1_sum += r.d1;
            ++n_err;
        }
    }
    const double n = static_cast<double>(records.size());
    all.fps_avg = fps_sum / n;
    all.mem_mib = mem_sum / n;
    if (n_err > 0) {
        all.epe = epe_sum / static_cast<double>(n_err);
        all.d1 = d1_sum / static_cast<double>(n_err);
        if (all.epe > 0 && all.mem_mib > 1) all.somer = somer(all.fps_avg, all.epe, all.mem_mib);
    }
    out.push_back(std::move(all));
    return out;
}

}  // namespace vimd
