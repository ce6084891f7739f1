#include "attnd/losses.hpp"

#include "attnd/errors.hpp"
#include "attnd/ops.hpp"

namespace attnd {

Tensor cross_entropy(const Tensor& y, int index) {
    if (index < 0 || static_cast<size_t>(index) >= y.size()) {
        throw InputError("cross_entropy: answer index " + std::to_string(index) +
                         " out of range for " + y.shape_str());
    }
    return ops::cross_entropy_prob(y, static_cast<size_t>(index));
}

Tensor forward_kl(const AttentionMap& p, const AttentionMap& q) {
    return ops::forward_kl(p.weights, q.weights);
}

namespace {

void check_batch(const std::vector<ForwardOutput>& outputs, const std::vector<int>& targets,
                 bool need_reasoning) {
    if (outputs.empty()) throw InputError("loss over an empty batch");
    if (outputs.size() != targets.size()) {
        throw InputError("batch has " + std::to_string(outputs.size()) + " outputs but " +
                         std::to_string(targets.size()) + " targets");
    }
    if (need_reasoning) {
        for (const ForwardOutput& out : outputs) {
            if (!out.y_r.has_value() || !out.alpha_r.has_value()) {
                throw StateError("stage loss requires train-mode outputs with a reasoning branch");
            }
        }
    }
}

}  // namespace

StageLoss stage1_loss(const std::vector<ForwardOutput>& outputs, const std::vector<int>& targets) {
    check_batch(outputs, targets, true);
    const double inv_n = 1.0 / static_cast<double>(outputs.size());
    Tensor sum_q, sum_r;
    for (size_t i = 0; i < outputs.size(); ++i) {
        Tensor ce_q = cross_entropy(outputs[i].y_q, targets[i]);
        Tensor ce_r = cross_entropy(*outputs[i].y_r, targets[i]);
        sum_q = i == 0 ? ce_q : ops::add(sum_q, ce_q);
        sum_r = i == 0 ? ce_r : ops::add(sum_r, ce_r);
    }
    Tensor mean_q = ops::scale(sum_q, inv_n);
    Tensor mean_r = ops::scale(sum_r, inv_n);
    StageLoss loss;
    loss.total = ops::add(mean_q, mean_r);
    loss.report.stage = 1;
    loss.report.l_q = mean_q.value();
    loss.report.l_r = mean_r.value();
    loss.report.total = loss.total.value();
    loss.report.batch_size = outputs.size();
    return loss;
}

StageLoss stage2_loss(const std::vector<ForwardOutput>& outputs, const std::vector<int>& targets,
                      double kl_scale) {
    check_batch(outputs, targets, true);
    const double inv_n = 1.0 / static_cast<double>(outputs.size());
    Tensor sum_q, sum_kl;
    for (size_t i = 0; i < outputs.size(); ++i) {
        Tensor ce_q = cross_entropy(outputs[i].y_q, targets[i]);
        Tensor kl = forward_kl(outputs[i].alpha_q, *outputs[i].alpha_r);
        sum_q = i == 0 ? ce_q : ops::add(sum_q, ce_q);
        sum_kl = i == 0 ? kl : ops::add(sum_kl, kl);
    }
    Tensor mean_q = ops::scale(sum_q, inv_n);
    Tensor mean_kl = ops::scale(sum_kl, inv_n);
    StageLoss loss;
    loss.total = ops::add(mean_q, ops::scale(mean_kl, kl_scale));
    loss.report.stage = 2;
    loss.report.l_q = mean_q.value();
    loss.report.kl = mean_kl.value();
    loss.report.total = loss.total.value();
    loss.report.batch_size = outputs.size();
    return loss;
}

}  // namespace attnd
