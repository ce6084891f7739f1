#pragma once

#include <vector>

#include "attnd/model.hpp"
#include "attnd/tensor.hpp"

namespace attnd {

/// Per-batch loss components. total == l_q + l_r (stage 1) or
/// total == l_q + kl_scale * kl (stage 2).
struct LossReport {
    int stage = 0;
    double l_q = 0.0;
    double l_r = 0.0;
    double kl = 0.0;
    double total = 0.0;
    size_t batch_size = 0;
};

struct StageLoss {
    Tensor total;  // scalar, graph-connected
    LossReport report;
};

/// -log(max(y[index], 1e-12)) for a 4-way answer distribution.
Tensor cross_entropy(const Tensor& y, int index);

/// Forward KL divergence between two attention maps over the same grid.
Tensor forward_kl(const AttentionMap& p, const AttentionMap& q);

/// Mean question cross-entropy plus mean reasoning cross-entropy.
StageLoss stage1_loss(const std::vector<ForwardOutput>& outputs, const std::vector<int>& targets);

/// Mean question cross-entropy plus kl_scale times the mean forward KL from
/// the question attention to the reasoning attention. The reasoning side is
/// expected to come from a frozen decoder; freezing, not this function,
/// stops the gradient.
StageLoss stage2_loss(const std::vector<ForwardOutput>& outputs, const std::vector<int>& targets,
                      double kl_scale = 1.0);

}  // namespace attnd
