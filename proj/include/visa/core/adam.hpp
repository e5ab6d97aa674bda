#pragma once

#include "visa/core/nn.hpp"

namespace visa {

/// Adam with optional global-norm gradient clipping. Moments are keyed by
/// parameter order so checkpoints can restore them bit-exactly.
template <typename S>
class Adam {
public:
    struct Options {
        S lr = S(1e-3);
        S beta1 = S(0.9);
        S beta2 = S(0.999);
        S eps = S(1e-8);
        S clipNorm = S(1.0);  // <=0 disables clipping
    };

    Adam() = default;
    Adam(std::vector<Parameter<S>*> params, Options opt) : params_(std::move(params)), opt_(opt) {
        for (auto* p : params_) {
            m_.push_back(MatX<S>::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(MatX<S>::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void zeroGrad() {
        for (auto* p : params_) p->zeroGrad();
    }

    /// Returns the pre-clip global gradient norm.
    S step() {
        S norm2 = 0;
        for (auto* p : params_) norm2 += p->grad.squaredNorm();
        S norm = std::sqrt(norm2);
        S scale = S(1);
        if (opt_.clipNorm > S(0) && norm > opt_.clipNorm) scale = opt_.clipNorm / norm;
        ++t_;
        S bc1 = S(1) - std::pow(opt_.beta1, S(t_));
        S bc2 = S(1) - std::pow(opt_.beta2, S(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Parameter<S>& p = *params_[i];
            MatX<S> g = p.grad * scale;
            m_[i] = opt_.beta1 * m_[i] + (S(1) - opt_.beta1) * g;
            v_[i] = opt_.beta2 * v_[i] + (S(1) - opt_.beta2) * g.cwiseProduct(g);
            MatX<S> mhat = m_[i] / bc1;
            MatX<S> vhat = v_[i] / bc2;
            p.value -= opt_.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + opt_.eps).matrix());
        }
        return norm;
    }

    const std::vector<Parameter<S>*>& params() const { return params_; }
    Options& options() { return opt_; }
    long stepCount() const { return t_; }
    void setStepCount(long t) { t_ = t; }
    std::vector<MatX<S>>& moment1() { return m_; }
    std::vector<MatX<S>>& moment2() { return v_; }

private:
    std::vector<Parameter<S>*> params_;
    Options opt_{};
    std::vector<MatX<S>> m_, v_;
    long t_ = 0;
};

}  // namespace visa
