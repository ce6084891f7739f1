#include "attnd/viz.hpp"

#include <cstdio>
#include <filesystem>

#include "attnd/errors.hpp"
#include "attnd/heatmap.hpp"

namespace fs = std::filesystem;

namespace attnd {

nlohmann::json CompareReport::to_json() const {
    return {{"baseline",
             {{"accuracy", baseline_eval.accuracy},
              {"mean_attn_on_target", baseline_eval.mean_attn_on_target},
              {"mean_kl_q_r", baseline_eval.mean_kl_q_r},
              {"ablation_drop", baseline_ablation.drop}}},
            {"distilled",
             {{"accuracy", distilled_eval.accuracy},
              {"mean_attn_on_target", distilled_eval.mean_attn_on_target},
              {"mean_kl_q_r", distilled_eval.mean_kl_q_r},
              {"ablation_drop", distilled_ablation.drop}}},
            {"n_heatmap_pairs", n_heatmap_pairs}};
}

CompareReport compare_checkpoints(const std::string& baseline_ckpt, const std::string& distilled_ckpt,
                                  const std::vector<Sample>& split, size_t n_samples,
                                  const std::string& out_dir) {
    const TrainState baseline = load_checkpoint(baseline_ckpt);
    const TrainState distilled = load_checkpoint(distilled_ckpt);
    if (!(baseline.params.config() == distilled.params.config())) {
        throw InputError("checkpoints have different model configs: " + baseline_ckpt + " vs " +
                         distilled_ckpt);
    }

    CompareReport report;
    report.baseline_eval = evaluate(baseline.params, split);
    report.distilled_eval = evaluate(distilled.params, split);
    report.baseline_ablation = ablation(baseline.params, split);
    report.distilled_ablation = ablation(distilled.params, split);

    if (!out_dir.empty() && n_samples > 0) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
        const size_t n = std::min(n_samples, split.size());
        for (size_t i = 0; i < n; ++i) {
            const Sample& s = split[i];
            char name[64];
            std::snprintf(name, sizeof name, "baseline_%04zu", s.id);
            export_heatmap(question_attention(baseline.params, s), s.target_cells,
                           out_dir + "/" + name);
            std::snprintf(name, sizeof name, "distilled_%04zu", s.id);
            export_heatmap(question_attention(distilled.params, s), s.target_cells,
                           out_dir + "/" + name);
        }
        report.n_heatmap_pairs = n;
    }
    return report;
}

}  // namespace attnd
