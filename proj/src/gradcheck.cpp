#include "race/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace race {

GradCheckReport grad_check(const std::function<double()>& loss_fn, const std::function<void()>& backward_fn,
                           std::vector<std::pair<std::string, Tensor<double>*>> groups, double tolerance,
                           double step) {
    for (auto& [name, p] : groups) p->zero_grad();
    backward_fn();

    GradCheckReport report;
    for (auto& [name, p] : groups) {
        GradCheckGroup g;
        g.name = name;
        for (size_t j = 0; j < p->value.size(); ++j) {
            const double saved = p->value.data[j];
            p->value.data[j] = saved + step;
            const double up = loss_fn();
            p->value.data[j] = saved - step;
            const double dn = loss_fn();
            p->value.data[j] = saved;
            const double numeric = (up - dn) / (2.0 * step);
            const double analytic = p->requires_grad ? p->grad.data[j] : 0.0;
            const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-3});
            const double rel = std::fabs(numeric - analytic) / denom;
            g.max_rel_error = std::max(g.max_rel_error, rel);
        }
        g.passed = g.max_rel_error <= tolerance;
        report.worst = std::max(report.worst, g.max_rel_error);
        report.all_passed = report.all_passed && g.passed;
        report.groups.push_back(std::move(g));
    }
    return report;
}

}  // namespace race
