// Finite-difference verification of backward rules. Runs in double
// precision: central differences with step h, compared to the analytic
// gradient under a relative tolerance.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "zsnmt/tensor.hpp"
#include "zsnmt/util.hpp"

namespace zsnmt {

struct GradCheckReport {
    bool ok = true;
    double worst_rel = 0.0;      // max relative discrepancy seen
    double worst_analytic = 0.0; // analytic gradient at the worst element
    double worst_numeric = 0.0;  // numeric estimate at the worst element
    std::size_t worst_input = 0; // which leaf tensor
    std::size_t worst_index = 0; // flat element index within that leaf
    std::size_t checked = 0;     // elements compared

    std::string describe() const {
        if (ok) return "gradcheck ok over " + std::to_string(checked) + " elements";
        return "gradcheck FAILED at input " + std::to_string(worst_input) + " elem " +
               std::to_string(worst_index) + ": analytic=" + std::to_string(worst_analytic) +
               " numeric=" + std::to_string(worst_numeric) +
               " rel=" + std::to_string(worst_rel);
    }
};

// Checks d(loss)/d(inputs) for a scalar-valued function of leaf tensors.
// The function is re-invoked per probe, so it must be a pure function of
// the leaf values (re-seed any internal randomness per call).
inline GradCheckReport check_gradients(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
    std::vector<Tensor<double>> inputs, double h = 1e-5, double rel_tol = 1e-4) {
    for (auto& in : inputs) in.set_requires_grad(true);

    Tensor<double> loss = fn(inputs);
    if (loss.numel() != 1) throw DimensionError("check_gradients: fn must return a scalar");
    for (auto& in : inputs) in.zero_grad();
    loss.backward();

    // Analytic gradients captured before probing mutates values.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) analytic.push_back(in.grad());

    GradCheckReport rep;
    NoGradGuard ng;  // probe evaluations build no graph
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& vals = inputs[t].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double up = fn(inputs).item();
            vals[i] = orig - h;
            const double dn = fn(inputs).item();
            vals[i] = orig;
            const double numeric = (up - dn) / (2.0 * h);
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
            const double rel = std::abs(a - numeric) / denom;
            ++rep.checked;
            if (rel > rep.worst_rel) {
                rep.worst_rel = rel;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
                rep.worst_input = t;
                rep.worst_index = i;
            }
        }
    }
    rep.ok = rep.worst_rel <= rel_tol;
    return rep;
}

}  // namespace zsnmt
