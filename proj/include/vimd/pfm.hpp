#pragma once

// PFM ("Pf" grayscale / "PF" color) reader and writer. Rows are stored
// bottom-up; the scale line's sign selects endianness and its magnitude
// is a value multiplier. Malformed input reports the byte offset.

#include "vimd/core.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace vimd {

struct PfmImage {
    std::vector<Matrix> planes;  // 1 or 3, each H x W, top-down row order
    int channels() const { return static_cast<int>(planes.size()); }
};

namespace detail {

inline std::string pfm_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c) && std::isspace(static_cast<unsigned char>(c))) {
    }
    if (!in) return tok;
    tok.push_back(c);
    while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok.push_back(c);
    return tok;
}

inline float swap_float(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    bits = __builtin_bswap32(bits);
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

inline PfmImage load_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw FormatError("pfm: cannot open " + path);
    const std::string magic = detail::pfm_token(f);
    if (magic != "Pf" && magic != "PF")
        throw FormatError("pfm: bad magic at byte 0 in " + path);
    const int channels = magic == "PF" ? 3 : 1;
    int w = 0, h = 0;
    double scale = 0.0;
    try {
        w = std::stoi(detail::pfm_token(f));
        h = std::stoi(detail::pfm_token(f));
        scale = std::stod(detail::pfm_token(f));
    } catch (const std::exception&) {
        throw FormatError("pfm: malformed header near byte " + std::to_string(f.tellg()) + " in " +
                          path);
    }
    if (w <= 0 || h <= 0) throw FormatError("pfm: non-positive dimensions in " + path);
    if (scale == 0.0) throw FormatError("pfm: zero scale in " + path);
    const bool little_endian = scale < 0.0;
    const double magnitude = std::abs(scale);
    const bool host_little = std::endian::native == std::endian::little;

    std::vector<float> row(static_cast<std::size_t>(w) * channels);
    PfmImage img;
    img.planes.assign(static_cast<std::size_t>(channels), Matrix(h, w));
    for (int r = h - 1; r >= 0; --r) {  // file stores bottom row first
        const auto offset = f.tellg();
        f.read(reinterpret_cast<char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!f)
            throw FormatError("pfm: truncated payload at byte " + std::to_string(offset) + " in " +
                              path);
        for (int c = 0; c < w; ++c)
            for (int k = 0; k < channels; ++k) {
                float v = row[static_cast<std::size_t>(c) * channels + k];
                if (little_endian != host_little) v = detail::swap_float(v);
                img.planes[static_cast<std::size_t>(k)](r, c) = v * magnitude;
            }
    }
    return img;
}

inline void save_pfm(const std::string& path, const PfmImage& img) {
    require(img.channels() == 1 || img.channels() == 3, "pfm: channels must be 1 or 3");
    const Matrix& first = img.planes[0];
    for (const auto& p : img.planes)
        require_dims(p.rows() == first.rows() && p.cols() == first.cols(),
                     "pfm: plane shapes differ");
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "pfm: cannot open " + path + " for writing");
    const bool host_little = std::endian::native == std::endian::little;
    f << (img.channels() == 3 ? "PF" : "Pf") << "\n"
      << first.cols() << " " << first.rows() << "\n"
      << (host_little ? "-1.0" : "1.0") << "\n";
    std::vector<float> row(static_cast<std::size_t>(first.cols()) * img.channels());
    for (Eigen::Index r = first.rows() - 1; r >= 0; --r) {
        for (Eigen::Index c = 0; c < first.cols(); ++c)
            for (int k = 0; k < img.channels(); ++k)
                row[static_cast<std::size_t>(c) * img.channels() + k] =
                    static_cast<float>(img.planes[static_cast<std::size_t>(k)](r, c));
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
}

inline void save_pfm(const std::string& path, const Matrix& plane) {
    save_pfm(path, PfmImage{{plane}});
}

}  // namespace vimd
