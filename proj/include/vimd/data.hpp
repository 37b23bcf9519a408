#pragma once

// Synthetic stereo pairs with exact ground truth, the KITTI 16-bit PNG
// disparity encoding, and tab-separated dataset manifests.

#include "vimd/core.hpp"
#include "vimd/encoder.hpp"
#include "vimd/matching.hpp"
#include "vimd/metrics.hpp"
#include "vimd/pfm.hpp"
#include "vimd/png_io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace vimd {

struct StereoSample {
    ImageTensor left, right;
    std::optional<DisparityMap> gt_disparity;
    std::string source_id;
    std::string frame_id;
};

// ---- synthetic generation --------------------------------------------------

// A fronto-parallel plane covering left-image columns [x0, x1) at a
// constant disparity.
struct ShiftLayer {
    double disparity = 0;
    int x0 = 0;
    int x1 = 0;
};

namespace detail {

// band-limited texture: white noise smoothed with two box-blur passes
inline ImageTensor noise_texture(int width, int height, Rng& rng) {
    ImageTensor img;
    img.h = height;
    img.w = width;
    img.data = random_matrix(rng, static_cast<Eigen::Index>(height) * width, 3);
    Grid g{img.data, height, width};
    for (int pass = 0; pass < 2; ++pass) {
        Matrix blurred = Matrix::Zero(g.data.rows(), 3);
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c) {
                Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
                int n = 0;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= height || cc < 0 || cc >= width) continue;
                        acc += g.data.row(static_cast<Eigen::Index>(rr) * width + cc);
                        ++n;
                    }
                blurred.row(static_cast<Eigen::Index>(r) * width + c) = acc / n;
            }
        g.data = blurred;
    }
    double lo = g.data.minCoeff(), hi = g.data.maxCoeff();
    img.data = (g.data.array() - lo) / std::max(hi - lo, 1e-12);
    return img;
}

}  // namespace detail

inline StereoSample gen_synthetic(int width, int height, const std::vector<ShiftLayer>& layers,
                                  unsigned seed = 0) {
    require(!layers.empty(), "gen_synthetic: need at least one layer");
    std::vector<ShiftLayer> sorted = layers;
    std::sort(sorted.begin(), sorted.end(),
              [](const ShiftLayer& a, const ShiftLayer& b) { return a.x0 < b.x0; });
    int cursor = 0;
    for (const auto& l : sorted) {
        require(l.disparity >= 0, "gen_synthetic: shifts must be non-negative");
        require(l.disparity < width, "gen_synthetic: shift must be smaller than the width");
        require(l.x0 == cursor, "gen_synthetic: regions must tile the frame");
        cursor = l.x1;
    }
    require(cursor == width, "gen_synthetic: regions must tile the frame");

    Rng rng(seed);
    StereoSample s;
    s.source_id = "synthetic";
    s.left = detail::noise_texture(width, height, rng);
    Grid left_grid{s.left.data, height, width};

    auto layer_at = [&](double x) -> const ShiftLayer* {
        for (const auto& l : sorted)
            if (x >= l.x0 && x < l.x1) return &l;
        return nullptr;
    };

    // painter's order: far (small disparity) first, near overwrites
    std::vector<const ShiftLayer*> by_depth;
    for (const auto& l : sorted) by_depth.push_back(&l);
    std::sort(by_depth.begin(), by_depth.end(),
              [](const ShiftLayer* a, const ShiftLayer* b) { return a->disparity < b->disparity; });

    s.right = s.left;  // fallback texture for uncovered columns
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (const ShiftLayer* l : by_depth) {
                const double xl = x + l->disparity;
                if (xl >= l->x0 && xl < l->x1 && xl <= width - 1)
                    s.right.data.row(static_cast<Eigen::Index>(y) * width + x) =
                        bilinear_sample(left_grid, xl, y);
            }

    DisparityMap gt;
    gt.values = Matrix::Zero(height, width);
    gt.valid = MaskMatrix::Zero(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const ShiftLayer* l = layer_at(x);
            gt.values(y, x) = l->disparity;
            const double xr = x - l->disparity;
            bool valid = xr >= 0;
            if (valid)
                for (const auto& other : sorted)
                    if (other.disparity > l->disparity && xr + other.disparity >= other.x0 &&
                        xr + other.disparity < other.x1) {
                        valid = false;  // a nearer plane claims the same right-image column
                        break;
                    }
            gt.valid(y, x) = valid ? 1 : 0;
        }
    s.gt_disparity = std::move(gt);
    return s;
}

// ---- KITTI disparity PNGs --------------------------------------------------

// stored = disparity * 256, stored 0 marks an invalid pixel
inline DisparityMap load_kitti_disparity(const std::string& path) {
    Gray16 raw = read_png_gray16(path);
    DisparityMap m;
    m.values = Matrix::Zero(raw.rows(), raw.cols());
    m.valid = MaskMatrix::Zero(raw.rows(), raw.cols());
    for (Eigen::Index r = 0; r < raw.rows(); ++r)
        for (Eigen::Index c = 0; c < raw.cols(); ++c)
            if (raw(r, c) != 0) {
                m.values(r, c) = raw(r, c) / 256.0;
                m.valid(r, c) = 1;
            }
    return m;
}

inline void save_kitti_disparity(const std::string& path, const DisparityMap& map) {
    Gray16 raw(map.values.rows(), map.values.cols());
    for (Eigen::Index r = 0; r < raw.rows(); ++r)
        for (Eigen::Index c = 0; c < raw.cols(); ++c) {
            if (!map.valid(r, c)) {
                raw(r, c) = 0;
                continue;
            }
            long v = std::lround(map.values(r, c) * 256.0);
            raw(r, c) = static_cast<std::uint16_t>(std::clamp(v, 1l, 65535l));
        }
    write_png_gray16(path, raw);
}

inline DisparityMap load_disparity(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".pfm") {
        PfmImage img = load_pfm(path);
        require(img.channels() == 1, "load_disparity: expected single-channel pfm");
        DisparityMap m = DisparityMap::dense(img.planes[0].cwiseAbs());
        for (Eigen::Index r = 0; r < m.values.rows(); ++r)
            for (Eigen::Index c = 0; c < m.values.cols(); ++c)
                if (!std::isfinite(img.planes[0](r, c))) {
                    m.valid(r, c) = 0;
                    m.values(r, c) = 0;
                }
        return m;
    }
    return load_kitti_disparity(path);
}

// ---- manifests -------------------------------------------------------------

struct DatasetManifest {
    struct Entry {
        std::string left, right, gt;  // gt empty when absent
    };
    std::string name;
    std::vector<Entry> entries;
};

// line format: left<TAB>right<TAB>gt_or_-; '#' starts a comment
inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw FormatError("manifest: cannot open " + path);
    DatasetManifest m;
    m.name = std::filesystem::path(path).stem().string();
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw FormatError("manifest: malformed line in " + path + ": " + line);
        DatasetManifest::Entry e;
        e.left = line.substr(0, t1);
        e.right = line.substr(t1 + 1, t2 - t1 - 1);
        std::string gt = line.substr(t2 + 1);
        if (gt != "-") e.gt = gt;
        m.entries.push_back(std::move(e));
    }
    require(!m.entries.empty(), "manifest: no entries in " + path);
    return m;
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream f(path);
    require(f.good(), "manifest: cannot open " + path + " for writing");
    for (const auto& e : m.entries)
        f << e.left << '\t' << e.right << '\t' << (e.gt.empty() ? "-" : e.gt) << "\n";
}

struct IterationResult {
    std::vector<std::vector<StereoSample>> batches;
    std::vector<std::string> errors;  // one message per failed entry
};

inline StereoSample load_sample(const DatasetManifest::Entry& e, const std::string& source) {
    StereoSample s;
    s.left = read_png_rgb8(e.left);
    s.right = read_png_rgb8(e.right);
    if (!e.gt.empty()) {
        s.gt_disparity = load_disparity(e.gt);
        require_dims(s.gt_disparity->values.rows() == s.left.h &&
                         s.gt_disparity->values.cols() == s.left.w,
                     "sample: ground truth shape differs from images");
    }
    require_dims(s.left.h == s.right.h && s.left.w == s.right.w,
                 "sample: left/right shapes differ");
    s.source_id = source;
    s.frame_id = std::filesystem::path(e.left).stem().string();
    return s;
}

inline IterationResult iterate(const DatasetManifest& manifest, int batch, unsigned seed = 0,
                               bool strict = false) {
    require(batch > 0, "iterate: batch size must be positive");
    std::vector<std::size_t> order(manifest.entries.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    IterationResult out;
    std::vector<StereoSample> current;
    for (std::size_t i : order) {
        const auto& e = manifest.entries[i];
        try {
            current.push_back(load_sample(e, manifest.name));
        } catch (const std::exception& ex) {
            std::string msg = "entry " + std::to_string(i) + " (" + e.left + "): " + ex.what();
            if (strict) throw FormatError(msg);
            out.errors.push_back(std::move(msg));
            continue;
        }
        if (static_cast<int>(current.size()) == batch) {
            out.batches.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) out.batches.push_back(std::move(current));
    return out;
}

}  // namespace vimd
