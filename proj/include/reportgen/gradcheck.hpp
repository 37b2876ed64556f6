#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "reportgen/params.hpp"
#include "reportgen/tensor.hpp"

namespace reportgen {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_group;
    std::vector<std::pair<std::string, double>> per_group;  // worst error per parameter
};

/// Central-finite-difference comparison of the tape gradients. `loss_fn`
/// rebuilds the forward graph from the current parameter values and must be
/// deterministic (run with dropout disabled); non-determinism is rejected.
/// Relative error: |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ModelParams& params,
                                  double eps = 1e-5) {
    const double probe_a = loss_fn().item();
    const double probe_b = loss_fn().item();
    if (probe_a != probe_b)
        throw ContractError("grad_check: loss function is not deterministic (" +
                            std::to_string(probe_a) + " vs " + std::to_string(probe_b) + ")");

    params.zero_grad();
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss = loss_fn();
        tape.backward(loss);
    }
    for (auto& [name, t] : params.entries())
        analytic.emplace_back(t.grad().begin(), t.grad().end());

    GradCheckReport report;
    for (std::size_t p = 0; p < params.entries().size(); ++p) {
        auto& [name, t] = params.entries()[p];
        if (analytic[p].empty()) analytic[p].assign(t.size(), 0.0);
        double group_worst = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + eps;
            const double plus = loss_fn().item();
            t[i] = saved - eps;
            const double minus = loss_fn().item();
            t[i] = saved;
            const double numeric = (plus - minus) / (2.0 * eps);
            const double a = analytic[p][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            group_worst = std::max(group_worst, rel);
        }
        report.per_group.emplace_back(name, group_worst);
        if (group_worst > report.max_rel_error) {
            report.max_rel_error = group_worst;
            report.worst_group = name;
        }
    }
    return report;
}

}  // namespace reportgen
