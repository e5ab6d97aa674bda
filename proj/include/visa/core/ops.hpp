#pragma once

#include "visa/core/tape.hpp"

#include <cmath>
#include <vector>

namespace visa {

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    Tape<S>& t = *a.tape;
    bool rg = a.rg() || b.rg();
    int id = t.emplace(a.v() + b.v(), rg, [a, b](Tape<S>& tt, int self) {
        tt.accumulate(a.id, tt.grad(self));
        tt.accumulate(b.id, tt.grad(self));
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    Tape<S>& t = *a.tape;
    bool rg = a.rg() || b.rg();
    int id = t.emplace(a.v() - b.v(), rg, [a, b](Tape<S>& tt, int self) {
        tt.accumulate(a.id, tt.grad(self));
        tt.accumulate(b.id, -tt.grad(self));
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> cwiseMul(Var<S> a, Var<S> b) {
    check(a.rows() == b.rows() && a.cols() == b.cols(), "cwiseMul: shape mismatch");
    Tape<S>& t = *a.tape;
    bool rg = a.rg() || b.rg();
    int id = t.emplace(a.v().cwiseProduct(b.v()), rg, [a, b](Tape<S>& tt, int self) {
        tt.accumulate(a.id, tt.grad(self).cwiseProduct(tt.val(b.id)));
        tt.accumulate(b.id, tt.grad(self).cwiseProduct(tt.val(a.id)));
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> scale(Var<S> a, S k) {
    Tape<S>& t = *a.tape;
    int id = t.emplace(a.v() * k, a.rg(), [a, k](Tape<S>& tt, int self) {
        tt.accumulate(a.id, tt.grad(self) * k);
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> addScalar(Var<S> a, S k) {
    Tape<S>& t = *a.tape;
    int id = t.emplace(a.v().array() + k, a.rg(), [a](Tape<S>& tt, int self) {
        tt.accumulate(a.id, tt.grad(self));
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
    check(a.cols() == b.rows(), "matmul: inner dim mismatch");
    Tape<S>& t = *a.tape;
    bool rg = a.rg() || b.rg();
    int id = t.emplace(a.v() * b.v(), rg, [a, b](Tape<S>& tt, int self) {
        const MatX<S>& g = tt.grad(self);
        if (tt.requiresGrad(a.id)) tt.accumulate(a.id, g * tt.val(b.id).transpose());
        if (tt.requiresGrad(b.id)) tt.accumulate(b.id, tt.val(a.id).transpose() * g);
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> transpose(Var<S> a) {
    Tape<S>& t = *a.tape;
    int id = t.emplace(a.v().transpose(), a.rg(), [a](Tape<S>& tt, int self) {
        tt.accumulate(a.id, tt.grad(self).transpose());
    });
    return Var<S>(&t, id);
}

/// Broadcast-adds a 1xC row vector to every row of a.
template <typename S>
Var<S> addRowvec(Var<S> a, Var<S> bias) {
    check(bias.rows() == 1 && bias.cols() == a.cols(), "addRowvec: bias must be 1xC");
    Tape<S>& t = *a.tape;
    bool rg = a.rg() || bias.rg();
    int id = t.emplace(a.v().rowwise() + RowX<S>(bias.v().row(0)), rg, [a, bias](Tape<S>& tt, int self) {
        tt.accumulate(a.id, tt.grad(self));
        tt.accumulate(bias.id, tt.grad(self).colwise().sum());
    });
    return Var<S>(&t, id);
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sigmoid(Var<S> a) {
    Tape<S>& t = *a.tape;
    MatX<S> y = (S(1) / (S(1) + (-a.v().array()).exp())).matrix();
    int id = t.emplace(std::move(y), a.rg(), [a](Tape<S>& tt, int self) {
        const auto& y2 = tt.val(self).array();
        tt.accumulate(a.id, (tt.grad(self).array() * y2 * (S(1) - y2)).matrix());
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> silu(Var<S> a) {
    Tape<S>& t = *a.tape;
    MatX<S> sg = (S(1) / (S(1) + (-a.v().array()).exp())).matrix();
    MatX<S> y = a.v().cwiseProduct(sg);
    int id = t.emplace(std::move(y), a.rg(), [a, sg](Tape<S>& tt, int self) {
        const auto& x = tt.val(a.id).array();
        const auto& s = sg.array();
        tt.accumulate(a.id, (tt.grad(self).array() * (s + x * s * (S(1) - s))).matrix());
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> tanhv(Var<S> a) {
    Tape<S>& t = *a.tape;
    int id = t.emplace(a.v().array().tanh().matrix(), a.rg(), [a](Tape<S>& tt, int self) {
        const auto& y = tt.val(self).array();
        tt.accumulate(a.id, (tt.grad(self).array() * (S(1) - y * y)).matrix());
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> expv(Var<S> a) {
    Tape<S>& t = *a.tape;
    int id = t.emplace(a.v().array().exp().matrix(), a.rg(), [a](Tape<S>& tt, int self) {
        tt.accumulate(a.id, tt.grad(self).cwiseProduct(tt.val(self)));
    });
    return Var<S>(&t, id);
}

/// log(1 + exp(x)), evaluated stably.
template <typename S>
Var<S> softplus(Var<S> a) {
    Tape<S>& t = *a.tape;
    MatX<S> y = a.v().unaryExpr([](S x) {
        return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    });
    int id = t.emplace(std::move(y), a.rg(), [a](Tape<S>& tt, int self) {
        const auto& x = tt.val(a.id).array();
        tt.accumulate(a.id, (tt.grad(self).array() * (S(1) / (S(1) + (-x).exp()))).matrix());
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> square(Var<S> a) {
    Tape<S>& t = *a.tape;
    int id = t.emplace(a.v().array().square().matrix(), a.rg(), [a](Tape<S>& tt, int self) {
        tt.accumulate(a.id, (tt.grad(self).array() * S(2) * tt.val(a.id).array()).matrix());
    });
    return Var<S>(&t, id);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum(Var<S> a) {
    Tape<S>& t = *a.tape;
    MatX<S> y(1, 1);
    y(0, 0) = a.v().sum();
    int id = t.emplace(std::move(y), a.rg(), [a](Tape<S>& tt, int self) {
        S g = tt.grad(self)(0, 0);
        tt.accumulate(a.id, MatX<S>::Constant(tt.val(a.id).rows(), tt.val(a.id).cols(), g));
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> mean(Var<S> a) {
    S inv = S(1) / S(a.rows() * a.cols());
    return scale(sum(a), inv);
}

/// Mean of |x| over all entries (subgradient 0 at exact zeros).
template <typename S>
Var<S> meanAbs(Var<S> a) {
    Tape<S>& t = *a.tape;
    S inv = S(1) / S(a.rows() * a.cols());
    MatX<S> y(1, 1);
    y(0, 0) = a.v().array().abs().sum() * inv;
    int id = t.emplace(std::move(y), a.rg(), [a, inv](Tape<S>& tt, int self) {
        S g = tt.grad(self)(0, 0) * inv;
        tt.accumulate(a.id, tt.val(a.id).unaryExpr([g](S x) {
            return x > S(0) ? g : (x < S(0) ? -g : S(0));
        }));
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> meanSq(Var<S> a) {
    return mean(square(a));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sliceRows(Var<S> a, Index r0, Index n) {
    check(r0 >= 0 && r0 + n <= a.rows(), "sliceRows: out of range");
    Tape<S>& t = *a.tape;
    int id = t.emplace(a.v().middleRows(r0, n), a.rg(), [a, r0, n](Tape<S>& tt, int self) {
        MatX<S> g = MatX<S>::Zero(tt.val(a.id).rows(), tt.val(a.id).cols());
        g.middleRows(r0, n) = tt.grad(self);
        tt.accumulate(a.id, g);
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> sliceCols(Var<S> a, Index c0, Index n) {
    check(c0 >= 0 && c0 + n <= a.cols(), "sliceCols: out of range");
    Tape<S>& t = *a.tape;
    int id = t.emplace(a.v().middleCols(c0, n), a.rg(), [a, c0, n](Tape<S>& tt, int self) {
        MatX<S> g = MatX<S>::Zero(tt.val(a.id).rows(), tt.val(a.id).cols());
        g.middleCols(c0, n) = tt.grad(self);
        tt.accumulate(a.id, g);
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> concatRows(const std::vector<Var<S>>& parts) {
    check(!parts.empty(), "concatRows: empty");
    Tape<S>& t = *parts[0].tape;
    Index rows = 0, cols = parts[0].cols();
    for (const auto& p : parts) {
        check(p.cols() == cols, "concatRows: col mismatch");
        rows += p.rows();
    }
    MatX<S> y(rows, cols);
    Index r = 0;
    bool rg = false;
    for (const auto& p : parts) {
        y.middleRows(r, p.rows()) = p.v();
        r += p.rows();
        rg = rg || p.rg();
    }
    std::vector<Var<S>> ps(parts);
    int id = t.emplace(std::move(y), rg, [ps](Tape<S>& tt, int self) {
        Index r2 = 0;
        for (const auto& p : ps) {
            tt.accumulate(p.id, tt.grad(self).middleRows(r2, p.rows()));
            r2 += p.rows();
        }
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> concatCols(const std::vector<Var<S>>& parts) {
    check(!parts.empty(), "concatCols: empty");
    Tape<S>& t = *parts[0].tape;
    Index cols = 0, rows = parts[0].rows();
    for (const auto& p : parts) {
        check(p.rows() == rows, "concatCols: row mismatch");
        cols += p.cols();
    }
    MatX<S> y(rows, cols);
    Index c = 0;
    bool rg = false;
    for (const auto& p : parts) {
        y.middleCols(c, p.cols()) = p.v();
        c += p.cols();
        rg = rg || p.rg();
    }
    std::vector<Var<S>> ps(parts);
    int id = t.emplace(std::move(y), rg, [ps](Tape<S>& tt, int self) {
        Index c2 = 0;
        for (const auto& p : ps) {
            tt.accumulate(p.id, tt.grad(self).middleCols(c2, p.cols()));
            c2 += p.cols();
        }
    });
    return Var<S>(&t, id);
}

/// out.row(i) = a.row(idx[i]); idx entries may repeat.
template <typename S>
Var<S> gatherRows(Var<S> a, std::vector<Index> idx) {
    Tape<S>& t = *a.tape;
    MatX<S> y(static_cast<Index>(idx.size()), a.cols());
    for (Index i = 0; i < y.rows(); ++i) {
        check(idx[i] >= 0 && idx[i] < a.rows(), "gatherRows: index out of range");
        y.row(i) = a.v().row(idx[i]);
    }
    int id = t.emplace(std::move(y), a.rg(), [a, idx](Tape<S>& tt, int self) {
        MatX<S> g = MatX<S>::Zero(tt.val(a.id).rows(), tt.val(a.id).cols());
        for (Index i = 0; i < tt.grad(self).rows(); ++i) g.row(idx[i]) += tt.grad(self).row(i);
        tt.accumulate(a.id, g);
    });
    return Var<S>(&t, id);
}

/// Reshape by reinterpreting the row-major element sequence of (rows,cols).
/// Eigen storage is column-major, so this is an explicit index remap.
template <typename S>
Var<S> reshapeRowMajor(Var<S> a, Index rows, Index cols) {
    check(a.rows() * a.cols() == rows * cols, "reshapeRowMajor: size mismatch");
    Tape<S>& t = *a.tape;
    Index ac = a.cols();
    MatX<S> y(rows, cols);
    for (Index i = 0; i < rows * cols; ++i) {
        y(i / cols, i % cols) = a.v()(i / ac, i % ac);
    }
    int id = t.emplace(std::move(y), a.rg(), [a, rows, cols, ac](Tape<S>& tt, int self) {
        MatX<S> g(tt.val(a.id).rows(), tt.val(a.id).cols());
        for (Index i = 0; i < rows * cols; ++i) {
            g(i / ac, i % ac) = tt.grad(self)(i / cols, i % cols);
        }
        tt.accumulate(a.id, g);
    });
    return Var<S>(&t, id);
}

// ---------------------------------------------------------------------------
// Row-wise softmax / layer norm
// ---------------------------------------------------------------------------

template <typename S>
Var<S> softmaxRows(Var<S> a) {
    Tape<S>& t = *a.tape;
    MatX<S> y = a.v();
    for (Index r = 0; r < y.rows(); ++r) {
        RowX<S> row = y.row(r);
        S mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        y.row(r) = row / row.sum();
    }
    int id = t.emplace(std::move(y), a.rg(), [a](Tape<S>& tt, int self) {
        const MatX<S>& p = tt.val(self);
        const MatX<S>& g = tt.grad(self);
        MatX<S> gp = g.cwiseProduct(p);
        VecX<S> rs = gp.rowwise().sum();
        tt.accumulate(a.id, gp - p.cwiseProduct(rs.replicate(1, p.cols())));
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> layernormRows(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
    check(gamma.rows() == 1 && gamma.cols() == x.cols(), "layernorm: gamma shape");
    check(beta.rows() == 1 && beta.cols() == x.cols(), "layernorm: beta shape");
    Tape<S>& t = *x.tape;
    Index C = x.cols();
    VecX<S> mu = x.v().rowwise().mean();
    MatX<S> xc = x.v() - mu.replicate(1, C);
    VecX<S> var = xc.array().square().matrix().rowwise().mean();
    VecX<S> istd = (var.array() + eps).rsqrt();
    MatX<S> xhat = xc.cwiseProduct(istd.replicate(1, C));
    MatX<S> y = xhat.cwiseProduct(gamma.v().replicate(x.rows(), 1)).rowwise() + RowX<S>(beta.v().row(0));
    bool rg = x.rg() || gamma.rg() || beta.rg();
    int id = t.emplace(std::move(y), rg,
                       [x, gamma, beta, xhat, istd, C](Tape<S>& tt, int self) {
                           const MatX<S>& g = tt.grad(self);
                           tt.accumulate(beta.id, g.colwise().sum());
                           tt.accumulate(gamma.id, g.cwiseProduct(xhat).colwise().sum());
                           if (!tt.requiresGrad(x.id)) return;
                           MatX<S> gh = g.cwiseProduct(tt.val(gamma.id).replicate(g.rows(), 1));
                           VecX<S> m1 = gh.rowwise().mean();
                           VecX<S> m2 = gh.cwiseProduct(xhat).rowwise().mean();
                           MatX<S> gx = (gh - m1.replicate(1, C) - xhat.cwiseProduct(m2.replicate(1, C)))
                                            .cwiseProduct(istd.replicate(1, C));
                           tt.accumulate(x.id, gx);
                       });
    return Var<S>(&t, id);
}

// ---------------------------------------------------------------------------
// Convolution / resampling primitives (images stored as (H*W) x C, row-major
// pixel order: row index = y*W + x)
// ---------------------------------------------------------------------------

/// Index plan for an im2col patch extraction; -1 marks zero padding.
struct Im2colPlan {
    int ho = 0, wo = 0, k = 0, cin = 0;
    std::vector<Index> src;  // (ho*wo*k*k) source pixel indices
};

inline Im2colPlan planIm2col(int h, int w, int k, int stride, int pad) {
    Im2colPlan p;
    p.ho = (h + 2 * pad - k) / stride + 1;
    p.wo = (w + 2 * pad - k) / stride + 1;
    p.k = k;
    p.src.resize(static_cast<std::size_t>(p.ho) * p.wo * k * k);
    std::size_t n = 0;
    for (int oy = 0; oy < p.ho; ++oy) {
        for (int ox = 0; ox < p.wo; ++ox) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    int iy = oy * stride + ky - pad;
                    int ix = ox * stride + kx - pad;
                    bool in = iy >= 0 && iy < h && ix >= 0 && ix < w;
                    p.src[n++] = in ? static_cast<Index>(iy) * w + ix : Index(-1);
                }
            }
        }
    }
    return p;
}

/// x: (H*W) x Cin -> (Ho*Wo) x (k*k*Cin). Column layout: tap-major, i.e.
/// column (ky*k+kx)*Cin + c.
template <typename S>
Var<S> im2col(Var<S> x, int h, int w, int k, int stride, int pad) {
    check(x.rows() == Index(h) * w, "im2col: H*W mismatch");
    Tape<S>& t = *x.tape;
    Im2colPlan plan = planIm2col(h, w, k, stride, pad);
    Index cin = x.cols();
    Index taps = Index(k) * k;
    MatX<S> y = MatX<S>::Zero(Index(plan.ho) * plan.wo, taps * cin);
    for (Index o = 0; o < y.rows(); ++o) {
        for (Index tap = 0; tap < taps; ++tap) {
            Index src = plan.src[o * taps + tap];
            if (src >= 0) y.block(o, tap * cin, 1, cin) = x.v().row(src);
        }
    }
    int id = t.emplace(std::move(y), x.rg(), [x, plan, cin, taps](Tape<S>& tt, int self) {
        MatX<S> g = MatX<S>::Zero(tt.val(x.id).rows(), tt.val(x.id).cols());
        const MatX<S>& gy = tt.grad(self);
        for (Index o = 0; o < gy.rows(); ++o) {
            for (Index tap = 0; tap < taps; ++tap) {
                Index src = plan.src[o * taps + tap];
                if (src >= 0) g.row(src) += gy.block(o, tap * cin, 1, cin);
            }
        }
        tt.accumulate(x.id, g);
    });
    return Var<S>(&t, id);
}

template <typename S>
Var<S> upsample2xNearest(Var<S> x, int h, int w) {
    check(x.rows() == Index(h) * w, "upsample2x: H*W mismatch");
    std::vector<Index> idx(static_cast<std::size_t>(4) * h * w);
    for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) idx[static_cast<std::size_t>(y) * 2 * w + xx] = Index(y / 2) * w + xx / 2;
    return gatherRows(x, std::move(idx));
}

// ---------------------------------------------------------------------------
// Rotary position embedding
// ---------------------------------------------------------------------------

/// Applies rotary embedding to x (N x D, D even): consecutive pairs (2i,2i+1)
/// are rotated by angle pos[n] * base^(-2i/D). The map is orthogonal per row,
/// so the backward pass rotates gradients by the opposite angle.
template <typename S>
Var<S> ropeRotate(Var<S> x, std::vector<double> positions, double base = 10000.0) {
    check(x.cols() % 2 == 0, "rope: dim must be even");
    check(Index(positions.size()) == x.rows(), "rope: positions size mismatch");
    Tape<S>& t = *x.tape;
    Index n = x.rows(), d = x.cols();
    MatX<S> cs(n, d / 2), sn(n, d / 2);
    for (Index i = 0; i < d / 2; ++i) {
        double freq = std::pow(base, -2.0 * double(i) / double(d));
        for (Index r = 0; r < n; ++r) {
            double th = positions[r] * freq;
            cs(r, i) = S(std::cos(th));
            sn(r, i) = S(std::sin(th));
        }
    }
    auto apply = [d](const MatX<S>& in, const MatX<S>& c, const MatX<S>& s, int sign) {
        MatX<S> out(in.rows(), in.cols());
        for (Index i = 0; i < d / 2; ++i) {
            auto x1 = in.col(2 * i).array();
            auto x2 = in.col(2 * i + 1).array();
            auto cc = c.col(i).array();
            auto ss = s.col(i).array() * S(sign);
            out.col(2 * i) = (x1 * cc - x2 * ss).matrix();
            out.col(2 * i + 1) = (x1 * ss + x2 * cc).matrix();
        }
        return out;
    };
    MatX<S> y = apply(x.v(), cs, sn, +1);
    int id = t.emplace(std::move(y), x.rg(), [x, cs, sn, apply](Tape<S>& tt, int self) {
        tt.accumulate(x.id, apply(tt.grad(self), cs, sn, -1));
    });
    return Var<S>(&t, id);
}

/// Scales every row to unit L2 norm.
template <typename S>
Var<S> l2normalizeRows(Var<S> a, S eps = S(1e-12)) {
    Tape<S>& t = *a.tape;
    const MatX<S>& x = a.v();
    MatX<S> out(x.rows(), x.cols());
    VecX<S> norms(x.rows());
    for (Index r = 0; r < x.rows(); ++r) {
        norms(r) = std::max(x.row(r).norm(), eps);
        out.row(r) = x.row(r) / norms(r);
    }
    int aid = a.id;
    int id = t.emplace(std::move(out), a.rg(), [aid, norms](Tape<S>& tt, int self) {
        const MatX<S>& g = tt.grad(self);
        const MatX<S>& y = tt.val(self);
        MatX<S> ga(g.rows(), g.cols());
        for (Index r = 0; r < g.rows(); ++r)
            ga.row(r) = (g.row(r) - y.row(r) * y.row(r).dot(g.row(r))) / norms(r);
        tt.accumulate(aid, ga);
    });
    return Var<S>(&t, id);
}

}  // namespace visa
