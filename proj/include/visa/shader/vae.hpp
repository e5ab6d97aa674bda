#pragma once

#include "visa/core/nn.hpp"

namespace visa {

/// Toy pixel autoencoder pair: an 8x-downsampling encoder producing C_z
/// latent channels, and a small upsampling decoder back to RGB in (0,1).
/// The encoder is pretrained then frozen; the decoder stays trainable
/// through stage 1.
template <typename S>
struct PixelVae {
    Index cz = 8;
    int frameSize = 64;
    Conv2d<S> e1, e2, e3;
    Conv2d<S> d0, d1, d2, d3;
    mutable long encodeCalls = 0;  // call-count contract for the rgb-cond path

    int latentSize() const { return frameSize / 8; }

    PixelVae() = default;
    PixelVae(ParamStore<S>& store, Index cz_, int frameSize_, Rng& rng)
        : cz(cz_),
          frameSize(frameSize_),
          e1(store, "vae.enc.c1", 3, 16, 3, 2, 1, rng),
          e2(store, "vae.enc.c2", 16, 32, 3, 2, 1, rng),
          e3(store, "vae.enc.c3", 32, cz_, 3, 2, 1, rng),
          d0(store, "vae.dec.c0", cz_, 48, 1, 1, 0, rng),
          d1(store, "vae.dec.c1", 48, 32, 3, 1, 1, rng),
          d2(store, "vae.dec.c2", 32, 16, 3, 1, 1, rng),
          d3(store, "vae.dec.c3", 16, 3, 3, 1, 1, rng) {
        check(frameSize_ % 8 == 0, "vae: frame size must be divisible by the 8x stride");
    }

    /// (frameSize^2) x 3 pixels -> (latentSize^2) x C_z.
    Var<S> encode(Tape<S>& t, Var<S> frame) const {
        check(frame.cols() == 3 && frame.rows() == Index(frameSize) * frameSize,
              "vae_encode: expected a " + std::to_string(frameSize) + "^2 RGB frame");
        ++encodeCalls;
        Var<S> x = silu(e1(t, frame, frameSize, frameSize));
        int h = e1.outDim(frameSize);
        x = silu(e2(t, x, h, h));
        h = e2.outDim(h);
        x = e3(t, x, h, h);
        return x;
    }

    /// (latentSize^2) x C_z -> (frameSize^2) x 3 in (0,1).
    Var<S> decode(Tape<S>& t, Var<S> latent) const {
        int ls = latentSize();
        check(latent.cols() == cz && latent.rows() == Index(ls) * ls,
              "tiny_decode: latent shape mismatch");
        Var<S> x = silu(d0(t, latent, ls, ls));
        int h = ls;
        x = upsample2xNearest(x, h, h);
        h *= 2;
        x = silu(d1(t, x, h, h));
        x = upsample2xNearest(x, h, h);
        h *= 2;
        x = silu(d2(t, x, h, h));
        x = upsample2xNearest(x, h, h);
        h *= 2;
        return sigmoid(d3(t, x, h, h));
    }
};

}  // namespace visa
