#pragma once

#include "visa/core/image.hpp"

#include <cmath>
#include <vector>

namespace visa {

/// 2D discrete Fourier transform of a real matrix via four real matmuls.
/// Frequencies follow the usual unshifted layout (DC at [0,0]).
template <typename S>
void dft2(const MatX<S>& x, MatX<double>& re, MatX<double>& im) {
    const Index h = x.rows(), w = x.cols();
    MatX<double> xd = x.template cast<double>();
    MatX<double> ch(h, h), sh(h, h), cw(w, w), sw(w, w);
    for (Index u = 0; u < h; ++u)
        for (Index y = 0; y < h; ++y) {
            double a = 2.0 * M_PI * double(u) * double(y) / double(h);
            ch(u, y) = std::cos(a);
            sh(u, y) = std::sin(a);
        }
    for (Index v = 0; v < w; ++v)
        for (Index xx = 0; xx < w; ++xx) {
            double a = 2.0 * M_PI * double(v) * double(xx) / double(w);
            cw(v, xx) = std::cos(a);
            sw(v, xx) = std::sin(a);
        }
    // Row pass: G[y,v] = sum_x X[y,x] e^{-i 2 pi v x / w}
    MatX<double> gre = xd * cw.transpose();
    MatX<double> gim = -(xd * sw.transpose());
    // Column pass: F[u,v] = sum_y e^{-i 2 pi u y / h} G[y,v]
    re = ch * gre + sh * gim;
    im = ch * gim - sh * gre;
}

/// Fraction of spectral magnitude carried by the high-frequency half of the
/// folded frequency range: bins whose folded frequency exceeds half the
/// Nyquist rate along either axis. A constant image scores ~0; content with
/// fine detail scores higher, and blurring strictly lowers it.
template <typename S>
double hfEnergyRatio(const Image<S>& img) {
    const Index h = img.h, w = img.w;
    MatX<S> gray(h, w);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            S acc = S(0);
            for (int c = 0; c < img.c; ++c) acc += img.at(int(y), int(x), c);
            gray(y, x) = acc / S(img.c);
        }
    MatX<double> re, im;
    dft2(gray, re, im);
    double hi = 0, total = 0;
    long hiCount = 0, allCount = 0;
    for (Index u = 0; u < h; ++u)
        for (Index v = 0; v < w; ++v) {
            double fu = double(std::min(u, h - u));  // folded frequency, 0..h/2
            double fv = double(std::min(v, w - v));
            double mag = std::sqrt(re(u, v) * re(u, v) + im(u, v) * im(u, v));
            total += mag;
            ++allCount;
            if (fu >= double(h) / 4.0 || fv >= double(w) / 4.0) {
                hi += mag;
                ++hiCount;
            }
        }
    check(hiCount > 0 && allCount > 0, "hf_ratio: degenerate image");
    return (hi / double(hiCount)) / std::max(total / double(allCount), 1e-12);
}

/// Mean high-frequency ratio over a frame sequence.
template <typename S>
double hfEnergyRatio(const std::vector<Image<S>>& frames) {
    check(!frames.empty(), "hf_ratio: empty sequence");
    double acc = 0;
    for (const auto& f : frames) acc += hfEnergyRatio(f);
    return acc / double(frames.size());
}

}  // namespace visa
