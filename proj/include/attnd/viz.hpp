#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "attnd/dataset.hpp"
#include "attnd/eval.hpp"
#include "attnd/trainer.hpp"

namespace attnd {

struct CompareReport {
    EvalReport baseline_eval;
    EvalReport distilled_eval;
    AblationReport baseline_ablation;
    AblationReport distilled_ablation;
    size_t n_heatmap_pairs = 0;

    nlohmann::json to_json() const;
};

/// Side-by-side comparison of two checkpoints on a split: per-sample paired
/// question-attention heatmaps (baseline_NNNN.*, distilled_NNNN.*) for the
/// first n_samples samples, plus a summary of accuracy, attention-on-target
/// and masking drop for both models. Refuses checkpoints whose model
/// configs differ.
CompareReport compare_checkpoints(const std::string& baseline_ckpt, const std::string& distilled_ckpt,
                                  const std::vector<Sample>& split, size_t n_samples,
                                  const std::string& out_dir);

}  // namespace attnd
