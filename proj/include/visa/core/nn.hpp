#pragma once

#include "visa/core/ops.hpp"
#include "visa/core/random.hpp"

#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace visa {

/// A named trainable tensor. Lives outside any tape; leaf() re-enters it into
/// the active graph each forward pass. Frozen parameters enter as constants.
template <typename S>
struct Parameter {
    std::string name;
    MatX<S> value;
    MatX<S> grad;
    bool frozen = false;

    void zeroGrad() { grad.setZero(); }
};

/// Registry of parameters with stable addresses and deterministic order.
template <typename S>
class ParamStore {
public:
    Parameter<S>& add(const std::string& name, MatX<S> init) {
        check(byName_.count(name) == 0, "duplicate parameter name: " + name);
        params_.push_back(Parameter<S>{name, std::move(init), {}, false});
        Parameter<S>& p = params_.back();
        p.grad = MatX<S>::Zero(p.value.rows(), p.value.cols());
        byName_[name] = &p;
        return p;
    }

    Parameter<S>* find(const std::string& name) {
        auto it = byName_.find(name);
        return it == byName_.end() ? nullptr : it->second;
    }

    std::deque<Parameter<S>>& all() { return params_; }
    const std::deque<Parameter<S>>& all() const { return params_; }

    /// Parameters whose name starts with any of the given prefixes.
    std::vector<Parameter<S>*> withPrefix(const std::vector<std::string>& prefixes) {
        std::vector<Parameter<S>*> out;
        for (auto& p : params_) {
            for (const auto& pre : prefixes) {
                if (p.name.rfind(pre, 0) == 0) {
                    out.push_back(&p);
                    break;
                }
            }
        }
        return out;
    }

private:
    std::deque<Parameter<S>> params_;  // deque: stable addresses
    std::map<std::string, Parameter<S>*> byName_;
};

template <typename S>
Var<S> leaf(Tape<S>& t, Parameter<S>& p) {
    if (p.frozen) return constant(t, p.value);
    Parameter<S>* pp = &p;
    int id = t.emplace(p.value, true, [pp](Tape<S>& tt, int self) { pp->grad += tt.grad(self); });
    return Var<S>(&t, id);
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

template <typename S>
MatX<S> heInit(Index rows, Index cols, Index fanIn, Rng& rng) {
    double std = std::sqrt(2.0 / double(fanIn));
    return rng.gaussian<S>(rows, cols, std);
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename S>
struct Linear {
    Parameter<S>* w = nullptr;  // (in x out)
    Parameter<S>* b = nullptr;  // (1 x out)

    Linear() = default;
    Linear(ParamStore<S>& store, const std::string& name, Index in, Index out, Rng& rng) {
        w = &store.add(name + ".w", heInit<S>(in, out, in, rng));
        b = &store.add(name + ".b", MatX<S>::Zero(1, out));
    }

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        return addRowvec(matmul(x, leaf(t, *w)), leaf(t, *b));
    }
};

/// 2D convolution over (H*W) x Cin activations via im2col; square kernel.
template <typename S>
struct Conv2d {
    int k = 3, stride = 1, pad = 1;
    Index cin = 0, cout = 0;
    Parameter<S>* w = nullptr;  // (k*k*cin x cout)
    Parameter<S>* b = nullptr;

    Conv2d() = default;
    Conv2d(ParamStore<S>& store, const std::string& name, Index cin_, Index cout_, int k_, int stride_,
           int pad_, Rng& rng)
        : k(k_), stride(stride_), pad(pad_), cin(cin_), cout(cout_) {
        w = &store.add(name + ".w", heInit<S>(Index(k) * k * cin, cout, Index(k) * k * cin, rng));
        b = &store.add(name + ".b", MatX<S>::Zero(1, cout));
    }

    int outDim(int in) const { return (in + 2 * pad - k) / stride + 1; }

    Var<S> operator()(Tape<S>& t, Var<S> x, int h, int w_) const {
        check(x.cols() == cin, "conv: channel mismatch");
        Var<S> cols = im2col(x, h, w_, k, stride, pad);
        return addRowvec(matmul(cols, leaf(t, *w)), leaf(t, *b));
    }
};

template <typename S>
struct LayerNorm {
    Parameter<S>* gamma = nullptr;
    Parameter<S>* beta = nullptr;

    LayerNorm() = default;
    LayerNorm(ParamStore<S>& store, const std::string& name, Index dim) {
        gamma = &store.add(name + ".g", MatX<S>::Ones(1, dim));
        beta = &store.add(name + ".b", MatX<S>::Zero(1, dim));
    }

    Var<S> operator()(Tape<S>& t, Var<S> x) const {
        return layernormRows(x, leaf(t, *gamma), leaf(t, *beta));
    }
};

}  // namespace visa
