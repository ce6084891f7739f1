#include "attnd/eval.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "attnd/errors.hpp"
#include "attnd/losses.hpp"
#include "attnd/ops.hpp"

namespace attnd {

nlohmann::json EvalReport::to_json() const {
    return {{"accuracy", accuracy},
            {"mean_attn_on_target", mean_attn_on_target},
            {"mean_kl_q_r", mean_kl_q_r},
            {"n_samples", n_samples}};
}

nlohmann::json AblationReport::to_json() const {
    return {{"accuracy_clean", accuracy_clean},
            {"accuracy_masked", accuracy_masked},
            {"drop", drop}};
}

size_t worker_threads() {
    const char* env = std::getenv("ATTD_THREADS");
    if (!env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1) return 1;
    return std::min<long>(v, 64);
}

namespace {

size_t argmax_lowest(const std::vector<double>& v) {
    size_t best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

struct PerSample {
    bool correct = false;
    double attn_on_target = 0.0;
    double kl = 0.0;
};

template <typename Fn>
void parallel_over(size_t n, Fn&& fn) {
    const size_t threads = std::min(worker_threads(), n == 0 ? size_t{1} : n);
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (size_t t = 0; t < threads; ++t) {
        pool.emplace_back([=]() {
            for (size_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

EvalReport evaluate(const ModelParams& params, const std::vector<Sample>& split,
                    const EvalOptions& options) {
    if (split.empty()) throw InputError("evaluate: empty split");
    const ModelParams frozen = params.detached_copy();
    const ModelConfig& cfg = frozen.config();

    std::vector<PerSample> rows(split.size());
    parallel_over(split.size(), [&](size_t i) {
        const Sample& s = split[i];
        // Accuracy always comes from a test-mode pass; the reasoning decoder
        // is only run for the divergence metric.
        const ForwardOutput out = forward(s, frozen, cfg, ForwardMode::Test);
        PerSample r;
        r.correct = argmax_lowest(out.y_q.data()) == static_cast<size_t>(s.correct_index);
        for (const auto& [row, col] : s.target_cells) {
            r.attn_on_target += out.alpha_q.weights.at(row, col);
        }
        if (options.compute_kl) {
            const DecodeResult rdec = cross_attention_decode(s.rationale_ids, s.grid, frozen, cfg,
                                                             ParamGroup::ReasoningDecoder);
            r.kl = forward_kl(out.alpha_q, rdec.alpha).value();
        }
        rows[i] = r;
    });

    EvalReport report;
    report.n_samples = split.size();
    size_t n_correct = 0;
    double attn_sum = 0.0, kl_sum = 0.0;
    for (const PerSample& r : rows) {  // fixed reduction order by sample position
        n_correct += r.correct ? 1 : 0;
        attn_sum += r.attn_on_target;
        kl_sum += r.kl;
    }
    report.accuracy = static_cast<double>(n_correct) / static_cast<double>(split.size());
    report.mean_attn_on_target = attn_sum / static_cast<double>(split.size());
    report.mean_kl_q_r = options.compute_kl ? kl_sum / static_cast<double>(split.size()) : 0.0;
    return report;
}

Sample mask_referenced_objects(const Sample& sample) {
    Sample masked = sample;
    Tensor features = sample.grid.features.clone_detached();
    const size_t d = sample.grid.depth();
    for (const auto& [row, col] : sample.target_cells) {
        double* cell = features.data().data() + (row * sample.grid.w + col) * d;
        std::fill(cell, cell + d, 0.0);
    }
    masked.grid = FeatureGrid(sample.grid.h, sample.grid.w, std::move(features));
    return masked;
}

AblationReport ablation(const ModelParams& params, const std::vector<Sample>& split) {
    EvalOptions opts;
    opts.compute_kl = false;
    const EvalReport clean = evaluate(params, split, opts);

    std::vector<Sample> masked;
    masked.reserve(split.size());
    for (const Sample& s : split) masked.push_back(mask_referenced_objects(s));
    const EvalReport degraded = evaluate(params, masked, opts);

    AblationReport report;
    report.accuracy_clean = clean.accuracy;
    report.accuracy_masked = degraded.accuracy;
    report.drop = clean.accuracy - degraded.accuracy;
    return report;
}

AttentionMap question_attention(const ModelParams& params, const Sample& sample) {
    const ModelParams frozen = params.detached_copy();
    const DecodeResult dec = cross_attention_decode(sample.question_ids, sample.grid, frozen,
                                                    frozen.config(), ParamGroup::QuestionDecoder);
    return dec.alpha;
}

}  // namespace attnd
