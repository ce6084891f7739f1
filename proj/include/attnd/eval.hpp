#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "attnd/dataset.hpp"
#include "attnd/model.hpp"

namespace attnd {

struct EvalReport {
    double accuracy = 0.0;
    double mean_attn_on_target = 0.0;
    double mean_kl_q_r = 0.0;  // only meaningful when computed with rationales
    size_t n_samples = 0;

    nlohmann::json to_json() const;
};

struct AblationReport {
    double accuracy_clean = 0.0;
    double accuracy_masked = 0.0;
    double drop = 0.0;  // accuracy_clean - accuracy_masked

    nlohmann::json to_json() const;
};

struct EvalOptions {
    /// Also run the reasoning decoder and report mean KL(alpha_q || alpha_r).
    bool compute_kl = true;
};

/// Test-mode evaluation of the question branch: accuracy (argmax ties break
/// to the lowest index), mean attention mass on the target cells, and
/// optionally the question/reasoning attention divergence. Deterministic
/// regardless of ATTD_THREADS; samples are reduced in id order.
EvalReport evaluate(const ModelParams& params, const std::vector<Sample>& split,
                    const EvalOptions& options = {});

/// Copy of the sample with the feature vectors at its target cells zeroed.
Sample mask_referenced_objects(const Sample& sample);

/// Clean-vs-masked accuracy with the same parameters.
AblationReport ablation(const ModelParams& params, const std::vector<Sample>& split);

/// Argmax cell of the question attention map for one sample (row-major tie
/// break), plus the map itself; used by the visualization paths.
AttentionMap question_attention(const ModelParams& params, const Sample& sample);

/// Worker cap from ATTD_THREADS (default 1).
size_t worker_threads();

}  // namespace attnd
