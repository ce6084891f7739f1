#include "attnd/gradcheck.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "attnd/errors.hpp"

namespace attnd {

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    os << (pass ? "pass" : "FAIL") << " max_rel_err=" << max_rel_err << " tol=" << tol
       << " checked=" << n_checked << " worst_index=" << worst_index;
    return os.str();
}

GradCheckReport grad_check_indices(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                   const std::vector<size_t>& indices, double step, double tol) {
    if (!x.requires_grad()) throw StateError("grad_check: x must be a requires_grad leaf");
    if (step <= 0.0) throw InputError("grad_check: step must be positive");

    x.zero_grad();
    Tensor y = f(x);
    if (y.size() != 1) throw StateError("grad_check: f must return a scalar");
    y.backward();
    const std::vector<double> autodiff = x.grad();

    GradCheckReport report;
    report.tol = tol;
    for (size_t idx : indices) {
        const double saved = x.data()[idx];
        x.data()[idx] = saved + step;
        const double f_plus = f(x).value();
        x.data()[idx] = saved - step;
        const double f_minus = f(x).value();
        x.data()[idx] = saved;

        const double fd = (f_plus - f_minus) / (2.0 * step);
        const double ad = autodiff[idx];
        const double rel = std::fabs(ad - fd) / std::max({1.0, std::fabs(ad), std::fabs(fd)});
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = idx;
        }
        ++report.n_checked;
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step,
                           double tol) {
    std::vector<size_t> all(x.size());
    std::iota(all.begin(), all.end(), size_t{0});
    return grad_check_indices(f, x, all, step, tol);
}

}  // namespace attnd
