#pragma once

// Disparity heat maps: HSV hue sweep 0 deg (red, minimum) to 240 deg
// (blue, maximum), invalid pixels black.

#include "vimd/core.hpp"
#include "vimd/metrics.hpp"
#include "vimd/png_io.hpp"

#include <cmath>
#include <string>

namespace vimd {

namespace detail {

inline Eigen::RowVector3d hsv_to_rgb(double hue_deg) {
    const double h = hue_deg / 60.0;
    const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
    if (h < 1) return {1, x, 0};
    if (h < 2) return {x, 1, 0};
    if (h < 3) return {0, 1, x};
    if (h < 4) return {0, x, 1};
    if (h < 5) return {x, 0, 1};
    return {1, 0, x};
}

}  // namespace detail

inline Matrix disparity_heatmap(const DisparityMap& map) {
    const Eigen::Index h = map.values.rows(), w = map.values.cols();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Eigen::Index r = 0; r < h; ++r)
        for (Eigen::Index c = 0; c < w; ++c)
            if (map.valid(r, c)) {
                lo = std::min(lo, map.values(r, c));
                hi = std::max(hi, map.values(r, c));
            }
    const double span = hi - lo;
    Matrix rgb = Matrix::Zero(h * w, 3);
    for (Eigen::Index r = 0; r < h; ++r)
        for (Eigen::Index c = 0; c < w; ++c) {
            if (!map.valid(r, c)) continue;  // black
            const double t = span > 0 ? (map.values(r, c) - lo) / span : 0.0;
            rgb.row(r * w + c) = detail::hsv_to_rgb(240.0 * t);
        }
    return rgb;
}

inline void render_heatmap_png(const DisparityMap& map, const std::string& path) {
    write_png_rgb8(path, disparity_heatmap(map), static_cast<int>(map.values.rows()),
                   static_cast<int>(map.values.cols()));
}

}  // namespace vimd
