#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnd/dataset.hpp"
#include "attnd/model.hpp"
#include "attnd/rng.hpp"

namespace attnd {

struct OptimizerConfig {
    std::string kind = "adam";  // "adam" or "sgd"
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.9;  // sgd only

    void validate() const;
    nlohmann::json to_json() const;
    static OptimizerConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
    size_t stage1_epochs = 11;
    size_t stage2_epochs = 5;
    size_t batch_size = 32;
    OptimizerConfig opt_stage1;        // adam, lr 1e-3
    OptimizerConfig opt_stage2;        // adam, lr 3e-4
    double clip_norm = 5.0;            // global gradient norm; <= 0 disables
    double kl_scale = 1.0;             // weight of the stage-2 alignment term
    bool stage2_train_language = false;  // broader reading: also update theta_L
    uint64_t seed = 1;
    std::string checkpoint_dir;        // empty = no checkpoints written
    size_t log_every = 50;

    TrainConfig() { opt_stage2.lr = 3e-4; }

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// First/second moment buffers (sgd keeps its velocity in m).
struct OptState {
    std::string kind = "adam";
    uint64_t t = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

struct TrainState {
    ModelParams params;
    OptState opt;
    int stage = 1;
    size_t epoch = 0;  // completed epochs within the current stage
    Rng rng;
    double best_val = 0.0;
    std::vector<std::string> frozen_groups;  // group prefixes, e.g. "rdec"
};

TrainState init_train_state(const ModelConfig& model_cfg, const TrainConfig& cfg);

/// Collects metric records and optionally appends them as JSON lines.
class MetricsWriter {
public:
    MetricsWriter() = default;
    explicit MetricsWriter(const std::string& path);

    void log(const nlohmann::json& entry);
    const std::vector<nlohmann::json>& entries() const { return entries_; }

private:
    std::ofstream file_;
    bool to_file_ = false;
    std::vector<nlohmann::json> entries_;
};

/// Stage 1: joint cross-entropy training of both branches. Runs epochs
/// state.epoch .. stage1_epochs-1, logs per-epoch losses and accuracies,
/// and checkpoints every epoch (stage1_epochNN.ckpt, final stage1.ckpt).
void train_stage1(const Dataset& data, const TrainConfig& cfg, TrainState& state,
                  MetricsWriter& log);

/// Stage 2: freezes the reasoning decoder (and, unless configured
/// otherwise, the language stream and geometric table), then finetunes the
/// question branch on cross-entropy plus the attention alignment term.
void train_stage2(const Dataset& data, const TrainConfig& cfg, TrainState& state,
                  MetricsWriter& log);

/// Bit-exact round trip including optimizer moments, rng state and the
/// frozen-group set.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace attnd
