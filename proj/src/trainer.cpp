#include "attnd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "attnd/errors.hpp"
#include "attnd/eval.hpp"
#include "attnd/losses.hpp"
#include "attnd/ops.hpp"
#include "attnd/serialize.hpp"

namespace fs = std::filesystem;

namespace attnd {

void OptimizerConfig::validate() const {
    if (kind != "adam" && kind != "sgd") throw InputError("optimizer kind must be adam or sgd");
    if (lr <= 0.0) throw InputError("learning rate must be positive");
    if (kind == "adam" && (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || eps <= 0.0)) {
        throw InputError("adam betas must lie in [0,1) and eps must be positive");
    }
    if (kind == "sgd" && (momentum < 0.0 || momentum >= 1.0)) {
        throw InputError("sgd momentum must lie in [0,1)");
    }
}

nlohmann::json OptimizerConfig::to_json() const {
    return {{"kind", kind},   {"lr", lr},   {"beta1", beta1},
            {"beta2", beta2}, {"eps", eps}, {"momentum", momentum}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
    OptimizerConfig c;
    c.kind = j.value("kind", c.kind);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.momentum = j.value("momentum", c.momentum);
    c.validate();
    return c;
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw InputError("batch_size must be at least 1");
    if (log_every == 0) throw InputError("log_every must be at least 1");
    if (kl_scale < 0.0) throw InputError("kl_scale must be nonnegative");
    opt_stage1.validate();
    opt_stage2.validate();
}

nlohmann::json TrainConfig::to_json() const {
    return {{"stage1_epochs", stage1_epochs},
            {"stage2_epochs", stage2_epochs},
            {"batch_size", batch_size},
            {"opt_stage1", opt_stage1.to_json()},
            {"opt_stage2", opt_stage2.to_json()},
            {"clip_norm", clip_norm},
            {"kl_scale", kl_scale},
            {"stage2_train_language", stage2_train_language},
            {"seed", seed},
            {"checkpoint_dir", checkpoint_dir},
            {"log_every", log_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.stage1_epochs = j.value("stage1_epochs", c.stage1_epochs);
    c.stage2_epochs = j.value("stage2_epochs", c.stage2_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("opt_stage1")) c.opt_stage1 = OptimizerConfig::from_json(j.at("opt_stage1"));
    if (j.contains("opt_stage2")) c.opt_stage2 = OptimizerConfig::from_json(j.at("opt_stage2"));
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.kl_scale = j.value("kl_scale", c.kl_scale);
    c.stage2_train_language = j.value("stage2_train_language", c.stage2_train_language);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.log_every = j.value("log_every", c.log_every);
    c.validate();
    return c;
}

TrainState init_train_state(const ModelConfig& model_cfg, const TrainConfig& cfg) {
    cfg.validate();
    TrainState state;
    state.params = ModelParams::init(model_cfg, cfg.seed);
    state.opt.kind = cfg.opt_stage1.kind;
    state.rng = Rng::derive(cfg.seed, 0x7ea12ULL);
    return state;
}

MetricsWriter::MetricsWriter(const std::string& path) {
    if (path.empty()) return;
    file_.open(path, std::ios::app);
    if (!file_) throw IoError("cannot open metrics log " + path + " for appending");
    to_file_ = true;
}

void MetricsWriter::log(const nlohmann::json& entry) {
    entries_.push_back(entry);
    if (to_file_) {
        file_ << entry.dump() << '\n';
        file_.flush();
        if (!file_) throw IoError("failed writing metrics log entry");
    }
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {

std::vector<std::string> trainable_names(const ModelParams& params) {
    std::vector<std::string> names;
    for (const auto& [name, tensor] : params.tensors()) {
        if (tensor.requires_grad()) names.push_back(name);
    }
    return names;  // map order: sorted by name, deterministic
}

void optimizer_step(TrainState& state, const OptimizerConfig& opt, double clip_norm) {
    const std::vector<std::string> names = trainable_names(state.params);

    double norm_sq = 0.0;
    for (const auto& name : names) {
        for (double g : state.params.at(name).grad()) norm_sq += g * g;
    }
    double scale = 1.0;
    if (clip_norm > 0.0) {
        const double norm = std::sqrt(norm_sq);
        if (norm > clip_norm) scale = clip_norm / norm;
    }

    state.opt.t += 1;
    if (opt.kind == "adam") {
        const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.opt.t));
        const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.opt.t));
        for (const auto& name : names) {
            Tensor& p = state.params.at(name);
            auto& m = state.opt.m[name];
            auto& v = state.opt.v[name];
            if (m.size() != p.size()) m.assign(p.size(), 0.0);
            if (v.size() != p.size()) v.assign(p.size(), 0.0);
            const auto& grad = p.grad();
            for (size_t i = 0; i < p.size(); ++i) {
                const double g = grad[i] * scale;
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
                p.data()[i] -= opt.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.eps);
            }
        }
    } else {  // sgd with momentum
        for (const auto& name : names) {
            Tensor& p = state.params.at(name);
            auto& vel = state.opt.m[name];
            if (vel.size() != p.size()) vel.assign(p.size(), 0.0);
            const auto& grad = p.grad();
            for (size_t i = 0; i < p.size(); ++i) {
                vel[i] = opt.momentum * vel[i] + grad[i] * scale;
                p.data()[i] -= opt.lr * vel[i];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Epoch loop shared by both stages

struct EpochStats {
    double sum_lq = 0.0;
    double sum_lr = 0.0;
    double sum_kl = 0.0;
    size_t n_correct = 0;
    size_t n_samples = 0;
};

EpochStats run_train_epoch(int stage, const Dataset& data, const TrainConfig& cfg, TrainState& state,
                           MetricsWriter& log, const OptimizerConfig& opt) {
    const size_t n = data.train.size();
    const size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    state.rng.shuffle(order);

    EpochStats stats;
    for (size_t b = 0; b < steps_per_epoch; ++b) {
        const size_t begin = b * cfg.batch_size;
        const size_t end = std::min(begin + cfg.batch_size, n);
        const double inv_b = 1.0 / static_cast<double>(end - begin);

        state.params.zero_grad_all();
        double batch_lq = 0.0, batch_laux = 0.0;
        for (size_t k = begin; k < end; ++k) {
            const Sample& sample = data.train[order[k]];
            const ForwardOutput out = forward(sample, state.params, state.params.config(),
                                              ForwardMode::Train);
            Tensor ce_q = cross_entropy(out.y_q, sample.correct_index);
            Tensor aux = stage == 1
                             ? cross_entropy(*out.y_r, sample.correct_index)
                             : ops::scale(forward_kl(out.alpha_q, *out.alpha_r), cfg.kl_scale);
            // Accumulating per-sample 1/B-scaled gradients keeps only one
            // sample graph alive at a time.
            Tensor contribution = ops::scale(ops::add(ce_q, aux), inv_b);
            contribution.backward();

            batch_lq += ce_q.value() * inv_b;
            batch_laux += aux.value() * inv_b;
            size_t pred = 0;
            for (size_t c = 1; c < out.y_q.size(); ++c) {
                if (out.y_q.at(c) > out.y_q.at(pred)) pred = c;
            }
            stats.n_correct += pred == static_cast<size_t>(sample.correct_index) ? 1 : 0;

            stats.sum_lq += ce_q.value();
            (stage == 1 ? stats.sum_lr : stats.sum_kl) += aux.value();
            ++stats.n_samples;
        }
        if (!std::isfinite(batch_lq) || !std::isfinite(batch_laux)) {
            throw NumericError("non-finite loss in stage " + std::to_string(stage) + " epoch " +
                               std::to_string(state.epoch + 1) + " batch " + std::to_string(b));
        }

        optimizer_step(state, opt, cfg.clip_norm);

        if (b % cfg.log_every == 0) {
            nlohmann::json entry = {{"stage", stage},
                                    {"epoch", state.epoch + 1},
                                    {"step", state.epoch * steps_per_epoch + b},
                                    {"l_q", batch_lq}};
            entry[stage == 1 ? "l_r" : "kl"] = batch_laux;
            log.log(entry);
        }
    }
    return stats;
}

void write_epoch_checkpoint(const TrainState& state, const TrainConfig& cfg, int stage,
                            size_t epoch) {
    if (cfg.checkpoint_dir.empty()) return;
    fs::create_directories(cfg.checkpoint_dir);
    char name[64];
    std::snprintf(name, sizeof name, "stage%d_epoch%02zu.ckpt", stage, epoch);
    save_checkpoint(state, cfg.checkpoint_dir + "/" + name);
}

void maybe_update_best(TrainState& state, const TrainConfig& cfg, double val_acc) {
    if (val_acc <= state.best_val && state.best_val > 0.0) return;
    state.best_val = std::max(state.best_val, val_acc);
    if (!cfg.checkpoint_dir.empty()) {
        save_checkpoint(state, cfg.checkpoint_dir + "/best.ckpt");
    }
}

}  // namespace

void train_stage1(const Dataset& data, const TrainConfig& cfg, TrainState& state,
                  MetricsWriter& log) {
    cfg.validate();
    if (state.stage != 1) throw StateError("stage-1 training requires a stage-1 state");
    if (data.train.empty()) throw InputError("training split is empty");

    const size_t steps_per_epoch = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
    while (state.epoch < cfg.stage1_epochs) {
        const EpochStats stats = run_train_epoch(1, data, cfg, state, log, cfg.opt_stage1);
        state.epoch += 1;

        EvalOptions opts;
        opts.compute_kl = false;
        const EvalReport val = evaluate(state.params, data.val, opts);
        const double denom = static_cast<double>(stats.n_samples);
        log.log({{"stage", 1},
                 {"epoch", state.epoch},
                 {"step", state.epoch * steps_per_epoch},
                 {"l_q", stats.sum_lq / denom},
                 {"l_r", stats.sum_lr / denom},
                 {"train_acc", static_cast<double>(stats.n_correct) / denom},
                 {"val_acc", val.accuracy}});
        write_epoch_checkpoint(state, cfg, 1, state.epoch);
        maybe_update_best(state, cfg, val.accuracy);
    }
    if (!cfg.checkpoint_dir.empty()) {
        fs::create_directories(cfg.checkpoint_dir);
        save_checkpoint(state, cfg.checkpoint_dir + "/stage1.ckpt");
    }
}

namespace {

void apply_stage2_freezing(TrainState& state, const TrainConfig& cfg) {
    state.frozen_groups = {"rdec"};
    if (!cfg.stage2_train_language) {
        state.frozen_groups.push_back("lang");
        state.frozen_groups.push_back("geom");
    }
    state.params.set_group_trainable(ParamGroup::ReasoningDecoder, false);
    state.params.set_group_trainable(ParamGroup::Language, cfg.stage2_train_language);
    state.params.set_group_trainable(ParamGroup::Geometric, cfg.stage2_train_language);
    state.params.set_group_trainable(ParamGroup::QuestionDecoder, true);
}

}  // namespace

void train_stage2(const Dataset& data, const TrainConfig& cfg, TrainState& state,
                  MetricsWriter& log) {
    cfg.validate();
    if (data.train.empty()) throw InputError("training split is empty");
    if (state.stage == 1) {
        // Transition: freeze the reasoning decoder and start a fresh
        // optimizer for the finetuning phase.
        apply_stage2_freezing(state, cfg);
        state.stage = 2;
        state.epoch = 0;
        state.opt = OptState{};
        state.opt.kind = cfg.opt_stage2.kind;
    } else if (state.stage == 2) {
        if (state.params.group_trainable(ParamGroup::ReasoningDecoder)) {
            throw StateError("stage-2 state must carry a frozen reasoning decoder");
        }
    } else {
        throw StateError("unknown training stage " + std::to_string(state.stage));
    }

    const size_t steps_per_epoch = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
    while (state.epoch < cfg.stage2_epochs) {
        const EpochStats stats = run_train_epoch(2, data, cfg, state, log, cfg.opt_stage2);
        state.epoch += 1;

        EvalOptions opts;
        opts.compute_kl = false;
        const EvalReport val = evaluate(state.params, data.val, opts);
        const double denom = static_cast<double>(stats.n_samples);
        log.log({{"stage", 2},
                 {"epoch", state.epoch},
                 {"step", state.epoch * steps_per_epoch},
                 {"l_q", stats.sum_lq / denom},
                 {"kl", stats.sum_kl / denom},
                 {"train_acc", static_cast<double>(stats.n_correct) / denom},
                 {"val_acc", val.accuracy},
                 {"attn_on_target", val.mean_attn_on_target}});
        write_epoch_checkpoint(state, cfg, 2, state.epoch);
        maybe_update_best(state, cfg, val.accuracy);
    }
    if (!cfg.checkpoint_dir.empty()) {
        fs::create_directories(cfg.checkpoint_dir);
        save_checkpoint(state, cfg.checkpoint_dir + "/stage2.ckpt");
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const TrainState& state, const std::string& path) {
    TensorContainer c;
    c.meta = {{"kind", "checkpoint"},
              {"model_config", state.params.config().to_json()},
              {"train",
               {{"stage", state.stage},
                {"epoch", state.epoch},
                {"rng", state.rng.serialize()},
                {"best_val", state.best_val},
                {"frozen_groups", state.frozen_groups},
                {"opt", {{"kind", state.opt.kind}, {"t", state.opt.t}}}}}};
    for (const auto& [name, tensor] : state.params.tensors()) {
        c.tensors.emplace(name, tensor.clone_detached());
    }
    auto store_moments = [&](const char* prefix, const std::map<std::string, std::vector<double>>& mm) {
        for (const auto& [name, values] : mm) {
            const Tensor& p = state.params.at(name);
            c.tensors.emplace(std::string(prefix) + name, Tensor(p.shape(), values));
        }
    };
    store_moments("opt.m.", state.opt.m);
    store_moments("opt.v.", state.opt.v);
    save_container(c, path);
}

TrainState load_checkpoint(const std::string& path) {
    TensorContainer c = load_container(path);
    if (c.meta.value("kind", "") != "checkpoint") {
        throw FormatError(path + ": container is not a checkpoint");
    }
    const ModelConfig cfg = ModelConfig::from_json(c.meta.at("model_config"));
    const nlohmann::json& train = c.meta.at("train");

    TrainState state;
    state.stage = train.at("stage").get<int>();
    state.epoch = train.at("epoch").get<size_t>();
    state.rng = Rng::deserialize(train.at("rng").get<std::string>());
    state.best_val = train.at("best_val").get<double>();
    state.frozen_groups = train.at("frozen_groups").get<std::vector<std::string>>();
    state.opt.kind = train.at("opt").at("kind").get<std::string>();
    state.opt.t = train.at("opt").at("t").get<uint64_t>();

    std::map<std::string, Tensor> params;
    for (auto& [name, tensor] : c.tensors) {
        if (name.rfind("opt.m.", 0) == 0) {
            state.opt.m.emplace(name.substr(6), tensor.data());
        } else if (name.rfind("opt.v.", 0) == 0) {
            state.opt.v.emplace(name.substr(6), tensor.data());
        } else {
            params.emplace(name, tensor);
        }
    }
    state.params = ModelParams::from_tensors(cfg, std::move(params));
    for (const std::string& group : state.frozen_groups) {
        if (group == "rdec") state.params.set_group_trainable(ParamGroup::ReasoningDecoder, false);
        else if (group == "lang") state.params.set_group_trainable(ParamGroup::Language, false);
        else if (group == "geom") state.params.set_group_trainable(ParamGroup::Geometric, false);
        else if (group == "qdec") state.params.set_group_trainable(ParamGroup::QuestionDecoder, false);
        else throw FormatError(path + ": unknown frozen group " + group);
    }
    return state;
}

}  // namespace attnd
