#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "ichscnet/errors.hpp"
#include "ichscnet/tensor.hpp"

namespace ichscnet {

struct GrayImage {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> pix;  // row-major

    GrayImage() = default;
    GrayImage(int64_t w, int64_t h, uint8_t fill = 0)
        : width(w), height(h), pix(static_cast<size_t>(w * h), fill) {}

    uint8_t& at(int64_t y, int64_t x) { return pix[static_cast<size_t>(y * width + x)]; }
    uint8_t at(int64_t y, int64_t x) const { return pix[static_cast<size_t>(y * width + x)]; }
};

// binary raster with values in {0, 1}
struct Mask {
    int64_t width = 0;
    int64_t height = 0;
    std::vector<uint8_t> on;

    Mask() = default;
    Mask(int64_t w, int64_t h) : width(w), height(h), on(static_cast<size_t>(w * h), 0) {}

    uint8_t& at(int64_t y, int64_t x) { return on[static_cast<size_t>(y * width + x)]; }
    uint8_t at(int64_t y, int64_t x) const { return on[static_cast<size_t>(y * width + x)]; }

    int64_t area() const {
        int64_t n = 0;
        for (uint8_t v : on) n += v;
        return n;
    }

    bool empty_mask() const { return area() == 0; }
};

// Half-open pixel box: x in [x_min, x_max), y in [y_min, y_max).
struct BBox {
    int64_t x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    int64_t width() const { return x_max - x_min; }
    int64_t height() const { return y_max - y_min; }
    int64_t area() const { return width() * height(); }
    bool valid() const { return x_max > x_min && y_max > y_min; }
    bool contains(int64_t x, int64_t y) const {
        return x >= x_min && x < x_max && y >= y_min && y < y_max;
    }

    BBox clamped(int64_t w, int64_t h) const {
        BBox b = *this;
        b.x_min = std::max<int64_t>(0, b.x_min);
        b.y_min = std::max<int64_t>(0, b.y_min);
        b.x_max = std::min(w, b.x_max);
        b.y_max = std::min(h, b.y_max);
        return b;
    }
};

inline bool tight_bbox(const Mask& m, BBox& out) {
    int64_t x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
    for (int64_t y = 0; y < m.height; ++y)
        for (int64_t x = 0; x < m.width; ++x)
            if (m.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return false;
    out = {x0, y0, x1 + 1, y1 + 1};
    return true;
}

// Euclidean disk dilation: a pixel turns on if any source pixel within
// distance r (dx^2 + dy^2 <= r^2) is on.
inline Mask dilate(const Mask& m, int64_t r) {
    std::vector<std::pair<int64_t, int64_t>> offs;
    for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= r * r) offs.emplace_back(dy, dx);
    Mask out(m.width, m.height);
    for (int64_t y = 0; y < m.height; ++y)
        for (int64_t x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            for (const auto& [dy, dx] : offs) {
                const int64_t ny = y + dy, nx = x + dx;
                if (ny >= 0 && ny < m.height && nx >= 0 && nx < m.width) out.at(ny, nx) = 1;
            }
        }
    return out;
}

// Block-average downsample by an integer factor; a cell turns on when at
// least half of its source block is on.
inline Mask downsample_mask(const Mask& m, int64_t factor) {
    if (factor <= 0 || m.width % factor || m.height % factor)
        throw ShapeError("downsample_mask: size not divisible by factor");
    Mask out(m.width / factor, m.height / factor);
    const int64_t half = factor * factor;  // compare 2*count >= factor^2
    for (int64_t y = 0; y < out.height; ++y)
        for (int64_t x = 0; x < out.width; ++x) {
            int64_t cnt = 0;
            for (int64_t dy = 0; dy < factor; ++dy)
                for (int64_t dx = 0; dx < factor; ++dx)
                    cnt += m.at(y * factor + dy, x * factor + dx);
            out.at(y, x) = (2 * cnt >= half) ? 1 : 0;
        }
    return out;
}

inline GrayImage mask_to_image(const Mask& m) {
    GrayImage img(m.width, m.height);
    for (size_t i = 0; i < m.on.size(); ++i) img.pix[i] = m.on[i] ? 255 : 0;
    return img;
}

// strict: reject any pixel outside {0, 255}
inline Mask image_to_mask(const GrayImage& img, bool strict, const std::string& what = "") {
    Mask m(img.width, img.height);
    for (size_t i = 0; i < img.pix.size(); ++i) {
        const uint8_t v = img.pix[i];
        if (strict && v != 0 && v != 255)
            throw DataError("mask " + what + " has non-binary pixel value " +
                            std::to_string(static_cast<int>(v)));
        m.on[i] = v >= 128 ? 1 : 0;
    }
    return m;
}

template <typename T>
Tensor<T> image_to_tensor(const GrayImage& img) {
    Tensor<T> t({1, img.height, img.width});
    for (size_t i = 0; i < img.pix.size(); ++i)
        t[static_cast<int64_t>(i)] = static_cast<T>(img.pix[i]) / T(255);
    return t;
}

template <typename T>
Tensor<T> mask_to_tensor(const Mask& m) {
    Tensor<T> t({1, m.height, m.width});
    for (size_t i = 0; i < m.on.size(); ++i)
        t[static_cast<int64_t>(i)] = static_cast<T>(m.on[i]);
    return t;
}

template <typename T>
Mask tensor_to_mask(const Tensor<T>& t, T threshold = T(0.5)) {
    const int64_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
    Mask m(w, h);
    for (int64_t i = 0; i < h * w; ++i) m.on[static_cast<size_t>(i)] = t[i] >= threshold ? 1 : 0;
    return m;
}

// ---------------------------------------------------------------------------
// PNG I/O: 8-bit grayscale, no interlace, fixed encoder settings so the
// same raster always produces the same bytes.
// ---------------------------------------------------------------------------

namespace detail_png {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace detail_png

inline void write_png_gray(const std::string& path, const GrayImage& img) {
    std::unique_ptr<std::FILE, detail_png::FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.pix.data() + y * img.width));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline GrayImage read_png_gray(const std::string& path) {
    std::unique_ptr<std::FILE, detail_png::FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open for reading: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png read failed: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (depth != 8 || color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("expected 8-bit grayscale png: " + path);
    }
    GrayImage img(static_cast<int64_t>(w), static_cast<int64_t>(h));
    for (png_uint_32 y = 0; y < h; ++y)
        png_read_row(png, img.pix.data() + static_cast<int64_t>(y) * img.width, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace ichscnet
