#pragma once

// Central finite-difference gradient checking used across the test suites.
// The oracle side perturbs raw input entries and re-runs the full forward
// function; it never touches the reverse-mode path it validates.

#include "visa/core/tape.hpp"

#include <functional>
#include <vector>

namespace visa::testing {

struct FdReport {
    double maxRel = 0.0;
    double maxAbs = 0.0;
    long checked = 0;
};

/// Compares analytic gradients against central differences.
/// f: evaluates the scalar objective from scratch given the input matrices.
/// grads: analytic gradients, one per input, same shapes.
/// Entries where both |fd| and |an| are below `floor` are skipped.
template <typename S>
FdReport fdCompare(std::function<S(const std::vector<MatX<S>>&)> f, std::vector<MatX<S>> inputs,
                   const std::vector<MatX<S>>& grads, S h, S floor = S(1e-9)) {
    FdReport rep;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (Index r = 0; r < inputs[k].rows(); ++r) {
            for (Index c = 0; c < inputs[k].cols(); ++c) {
                S orig = inputs[k](r, c);
                inputs[k](r, c) = orig + h;
                S fp = f(inputs);
                inputs[k](r, c) = orig - h;
                S fm = f(inputs);
                inputs[k](r, c) = orig;
                S fd = (fp - fm) / (2 * h);
                S an = grads[k](r, c);
                S abs = std::abs(fd - an);
                S den = std::max(std::abs(fd), std::abs(an));
                if (den < floor) continue;
                rep.maxAbs = std::max<double>(rep.maxAbs, double(abs));
                rep.maxRel = std::max<double>(rep.maxRel, double(abs / std::max(den, floor)));
                ++rep.checked;
            }
        }
    }
    return rep;
}

/// Spot-check variant: compares only the listed (input, row, col) coordinates.
template <typename S>
FdReport fdCompareAt(std::function<S(const std::vector<MatX<S>>&)> f, std::vector<MatX<S>> inputs,
                     const std::vector<MatX<S>>& grads,
                     const std::vector<std::array<Index, 3>>& coords, S h, S floor = S(1e-9)) {
    FdReport rep;
    for (const auto& [k, r, c] : coords) {
        S orig = inputs[k](r, c);
        inputs[k](r, c) = orig + h;
        S fp = f(inputs);
        inputs[k](r, c) = orig - h;
        S fm = f(inputs);
        inputs[k](r, c) = orig;
        S fd = (fp - fm) / (2 * h);
        S an = grads[k](r, c);
        S abs = std::abs(fd - an);
        S den = std::max(std::abs(fd), std::abs(an));
        if (den < floor) continue;
        rep.maxAbs = std::max<double>(rep.maxAbs, double(abs));
        rep.maxRel = std::max<double>(rep.maxRel, double(abs / std::max(den, floor)));
        ++rep.checked;
    }
    return rep;
}

}  // namespace visa::testing
