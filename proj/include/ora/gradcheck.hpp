#pragma once

// Central finite-difference gradient checking for double-precision graphs.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ora/autodiff.hpp"

namespace ora::ad {

struct GradCheckOptions {
    double step = 1e-5;
    double rel_tol = 1e-4;
    double abs_floor = 1e-6;
    /// Coordinates probed per input tensor; 0 probes all of them.
    size_t max_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    size_t checked = 0;
    size_t failures = 0;
    double worst_excess = 0.0;  // max of |a - n| / (rel_tol * max(|a|,|n|) + abs_floor)
    std::string worst_where;
    bool ok() const noexcept { return failures == 0 && checked > 0; }
};

/// `build(tape, leaves)` must return a scalar loss built from the leaves.
/// Analytic gradients come from one backward pass; numeric ones from
/// re-running `build` on fresh tapes with one coordinate perturbed.
template <class Build>
GradCheckResult gradient_check(std::vector<Tensor<double>> inputs, Build&& build, const GradCheckOptions& opt = {}) {
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var<double>> leaves;
        for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
        Var<double> loss = build(tape, leaves);
        tape.backward(loss);
        for (const auto& l : leaves) analytic.push_back(tape.grad(l));
    }
    auto eval = [&]() {
        Tape<double> tape;
        std::vector<Var<double>> leaves;
        for (const auto& t : inputs) leaves.push_back(tape.constant(t));
        return build(tape, leaves).item();
    };
    GradCheckResult res;
    Rng rng(opt.seed);
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        std::vector<size_t> coords(inputs[ti].size());
        for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (opt.max_per_tensor && coords.size() > opt.max_per_tensor) {
            for (size_t i = 0; i < opt.max_per_tensor; ++i)
                std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
            coords.resize(opt.max_per_tensor);
        }
        for (size_t c : coords) {
            double& x = inputs[ti].data[c];
            const double orig = x;
            x = orig + opt.step;
            const double up = eval();
            x = orig - opt.step;
            const double down = eval();
            x = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double a = analytic[ti][c];
            const double excess =
                std::abs(a - numeric) / (opt.rel_tol * std::max(std::abs(a), std::abs(numeric)) + opt.abs_floor);
            ++res.checked;
            if (excess > 1.0) ++res.failures;
            if (excess > res.worst_excess) {
                res.worst_excess = excess;
                res.worst_where = "input " + std::to_string(ti) + " coord " + std::to_string(c) +
                                  ": analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
            }
        }
    }
    return res;
}

}  // namespace ora::ad
