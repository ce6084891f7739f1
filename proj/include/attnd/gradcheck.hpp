#pragma once

#include <functional>
#include <string>

#include "attnd/tensor.hpp"

namespace attnd {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double tol = 0.0;
    size_t n_checked = 0;
    size_t worst_index = 0;
    bool pass = false;

    std::string to_string() const;
};

/// Compares the autodiff gradient of f at x against central finite
/// differences, element by element. The relative error denominator is
/// clamped at 1 so near-zero gradients are judged on absolute error.
/// f must be deterministic; x must be a requires_grad leaf (its data is
/// perturbed in place and restored).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double step = 1e-5, double tol = 1e-5);

/// Same check restricted to the given flat indices of x.
GradCheckReport grad_check_indices(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                   const std::vector<size_t>& indices, double step = 1e-5,
                                   double tol = 1e-5);

}  // namespace attnd
