#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "psrd/box.hpp"
#include "psrd/error.hpp"
#include "psrd/tensor.hpp"

namespace psrd {

/// 8-bit interleaved RGB raster.
struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<unsigned char> rgb;  // row-major, 3 bytes per pixel

    unsigned char& at(int x, int y, int c) {
        return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
    unsigned char at(int x, int y, int c) const {
        return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
};

/// Binary PPM, header `P6\n<w> <h>\n255\n` then raw pixel bytes.
inline void write_ppm(const std::string& path, const Image8& img) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open image for writing: " + path);
    os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!os) throw IoError("failed writing image: " + path);
}

namespace detail {

inline int ppm_next_int(std::istream& is, const std::string& path) {
    // skip whitespace and '#' comments between header fields
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = is.get();
    }
    if (c == EOF || !std::isdigit(c)) throw ParseError("not a valid P6 PPM header: " + path);
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = is.get();
    }
    return v;
}

}  // namespace detail

inline Image8 read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image for reading: " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '6') throw ParseError("not a P6 PPM file: " + path);
    Image8 img;
    img.width = detail::ppm_next_int(is, path);
    img.height = detail::ppm_next_int(is, path);
    const int maxval = detail::ppm_next_int(is, path);
    if (maxval != 255) throw ParseError("unsupported PPM maxval " + std::to_string(maxval) + ": " + path);
    if (img.width < 1 || img.height < 1) throw ParseError("bad PPM dimensions: " + path);
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (is.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
        throw ParseError("truncated PPM pixel data: " + path);
    }
    return img;
}

/// [3,H,W] tensor in [0,1]  ->  8-bit raster, rounding to the nearest level.
inline Image8 tensor_to_image(const Tensor& t) {
    detail::require_rank(t, 3, "image tensor");
    if (t.dim(0) != 3) throw DimensionError("image tensor must have 3 channels");
    Image8 img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const Real v = t[(static_cast<std::int64_t>(c) * img.height + y) * img.width + x];
                const int q = static_cast<int>(std::lround(std::clamp(v, Real(0), Real(1)) * Real(255)));
                img.at(x, y, c) = static_cast<unsigned char>(q);
            }
        }
    }
    return img;
}

inline Tensor image_to_tensor(const Image8& img) {
    Tensor t({3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t[(static_cast<std::int64_t>(c) * img.height + y) * img.width + x] =
                    static_cast<Real>(img.at(x, y, c)) / Real(255);
    return t;
}

/// Draws a box outline of the given thickness directly into the raster.
inline void draw_box_outline(Image8& img, const Box& box, unsigned char r, unsigned char gcol,
                             unsigned char b, int thickness = 2) {
    const int x1 = static_cast<int>(std::lround(box.x1));
    const int y1 = static_cast<int>(std::lround(box.y1));
    const int x2 = static_cast<int>(std::lround(box.x2)) - 1;
    const int y2 = static_cast<int>(std::lround(box.y2)) - 1;
    auto put = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        img.at(x, y, 0) = r;
        img.at(x, y, 1) = gcol;
        img.at(x, y, 2) = b;
    };
    for (int t = 0; t < thickness; ++t) {
        for (int x = x1; x <= x2; ++x) {
            put(x, y1 + t);
            put(x, y2 - t);
        }
        for (int y = y1; y <= y2; ++y) {
            put(x1 + t, y);
            put(x2 - t, y);
        }
    }
}

}  // namespace psrd
