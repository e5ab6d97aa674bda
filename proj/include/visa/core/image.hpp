#pragma once

#include "visa/core/matrix.hpp"

#include <string>

namespace visa {

/// Dense image with pixels flattened row-major: data.row(y*w + x) holds the
/// channel vector of pixel (x, y). Values are in [0,1] for display channels.
template <typename S>
struct Image {
    int h = 0, w = 0, c = 0;
    MatX<S> data;  // (h*w) x c

    Image() = default;
    Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_), data(MatX<S>::Zero(Index(h_) * w_, c_)) {}
    Image(int h_, int w_, MatX<S> d) : h(h_), w(w_), c(int(d.cols())), data(std::move(d)) {
        check(data.rows() == Index(h) * w, "Image: pixel count mismatch");
    }

    S at(int y, int x, int ch) const { return data(Index(y) * w + x, ch); }
    S& at(int y, int x, int ch) { return data(Index(y) * w + x, ch); }

    template <typename T>
    Image<T> cast() const {
        Image<T> out;
        out.h = h;
        out.w = w;
        out.c = c;
        out.data = data.template cast<T>();
        return out;
    }
};

/// Bilinear resample to (oh, ow); sample positions align pixel centers.
template <typename S>
Image<S> resizeBilinear(const Image<S>& img, int oh, int ow) {
    Image<S> out(oh, ow, img.c);
    double sy = double(img.h) / oh;
    double sx = double(img.w) / ow;
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double fy = (y + 0.5) * sy - 0.5;
            double fx = (x + 0.5) * sx - 0.5;
            int y0 = int(std::floor(fy)), x0 = int(std::floor(fx));
            double wy = fy - y0, wx = fx - x0;
            int y1 = y0 + 1, x1 = x0 + 1;
            auto cl = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
            int cy0 = cl(y0, img.h), cy1 = cl(y1, img.h), cx0 = cl(x0, img.w), cx1 = cl(x1, img.w);
            for (int ch = 0; ch < img.c; ++ch) {
                double v = (1 - wy) * ((1 - wx) * img.at(cy0, cx0, ch) + wx * img.at(cy0, cx1, ch)) +
                           wy * ((1 - wx) * img.at(cy1, cx0, ch) + wx * img.at(cy1, cx1, ch));
                out.at(y, x, ch) = S(v);
            }
        }
    }
    return out;
}

// PNG I/O (8-bit). Implemented in src/png_io.cpp on top of libpng.
Image<float> readPng(const std::string& path);
void writePng(const std::string& path, const Image<float>& img);

}  // namespace visa
