#pragma once

#include "humus/ops.hpp"

namespace humus {

struct FdOptions {
    double h = 1e-5;
    // elements to perturb per target; <0 checks all of them. Large composite
    // models sample a deterministic subset to keep the check affordable.
    int64_t max_per_target = -1;
    uint64_t seed = 0x66646f70ull;
    // elements with both |analytic| and |numeric| below this are skipped:
    // when |grad| * h falls near eps * |f|, the central difference is pure
    // cancellation noise and carries no information either way. Deep
    // composites set ~1e-6; single ops keep 0 (full coverage).
    double min_grad = 0.0;
};

// Central-difference gradient verification, always in 64-bit.
//
// `build` constructs the scalar-valued computation from scratch on a fresh
// tape, binding (at least) the listed Params via tape.param(). Analytic
// gradients come from one backward pass; numeric ones from perturbing the
// Param storage in place and re-running the forward. Returns the worst
// relative error over the checked elements, with denominator
// max(|analytic|, |numeric|, 1e-8).
template <class BuildFn>
double finite_diff_check(BuildFn build, const std::vector<Param<double>*>& targets,
                         const FdOptions& opt = {}) {
    for (auto* p : targets) p->zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        Var<double> loss = build(tape);
        if (loss.size() != 1) throw Error("finite_diff_check: build() must return a scalar");
        tape.backward(loss);
        for (auto* p : targets) analytic.push_back(p->grad);
    }

    auto eval = [&]() {
        Tape<double> tape;
        return build(tape).scalar();
    };

    double worst = 0.0;
    for (size_t ti = 0; ti < targets.size(); ++ti) {
        Param<double>& p = *targets[ti];
        const int64_t n = p.size();
        std::vector<int64_t> picks;
        if (opt.max_per_target < 0 || n <= opt.max_per_target) {
            picks.resize(size_t(n));
            for (int64_t i = 0; i < n; ++i) picks[size_t(i)] = i;
        } else {
            Rng rng(mix64(opt.seed, ti));
            for (int64_t i = 0; i < opt.max_per_target; ++i) picks.push_back(rng.uniform_int(0, n - 1));
        }
        for (int64_t i : picks) {
            const double saved = p.value[size_t(i)];
            p.value[size_t(i)] = saved + opt.h;
            const double up = eval();
            p.value[size_t(i)] = saved - opt.h;
            const double dn = eval();
            p.value[size_t(i)] = saved;
            const double num = (up - dn) / (2.0 * opt.h);
            const double ana = analytic[ti][size_t(i)];
            if (std::fabs(num) < opt.min_grad && std::fabs(ana) < opt.min_grad) continue;
            const double den = std::max({std::fabs(num), std::fabs(ana), 1e-8});
            worst = std::max(worst, std::fabs(num - ana) / den);
        }
    }
    for (auto* p : targets) p->zero_grad();
    return worst;
}

}  // namespace humus
