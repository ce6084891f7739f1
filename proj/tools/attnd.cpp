// Command-line entry point: dataset generation, two-stage training,
// evaluation, masking ablation, heatmap comparison and self-verification.
//
// Exit codes: 0 success, 1 property/runtime failure, 2 usage error,
// 3 I/O failure, 4 artifact mismatch.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>

#include "attnd/dataset.hpp"
#include "attnd/errors.hpp"
#include "attnd/eval.hpp"
#include "attnd/selfcheck.hpp"
#include "attnd/serialize.hpp"
#include "attnd/trainer.hpp"
#include "attnd/viz.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int code_for(const std::exception& e) {
    if (dynamic_cast<const attnd::InputError*>(&e)) return 2;
    if (dynamic_cast<const attnd::IoError*>(&e)) return 3;
    if (dynamic_cast<const attnd::FormatError*>(&e)) return 4;
    if (dynamic_cast<const attnd::DimensionError*>(&e)) return 4;
    if (dynamic_cast<const attnd::StateError*>(&e)) return 4;
    return 1;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct ManifestScope {
    std::string command;
    std::string path;  // empty = skip writing
    json config = json::object();
    uint64_t seed = 0;
    std::string dataset_manifest_hash;
    std::vector<std::string> artifacts;
    std::string started_at = utc_now();

    void write() const {
        if (path.empty()) return;
        const json manifest = {{"command", command},
                               {"config", config},
                               {"seed", seed},
                               {"dataset_manifest_hash", dataset_manifest_hash},
                               {"started_at", started_at},
                               {"finished_at", utc_now()},
                               {"artifacts", artifacts}};
        attnd::write_file_text(path, manifest.dump(2) + "\n");
    }
};

std::string dataset_hash(const std::string& data_dir) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", attnd::crc32_of_file(data_dir + "/manifest.json"));
    return buf;
}

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    try {
        return json::parse(attnd::read_file_text(path));
    } catch (const json::exception& e) {
        throw attnd::InputError("--config " + path + ": invalid JSON: " + std::string(e.what()));
    }
}

// flags win over the config file, which wins over defaults
template <typename T>
void merge_option(const json& cfg, const char* key, const CLI::Option* opt, T& value) {
    if (opt->count() == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
}

std::pair<size_t, size_t> parse_grid(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw attnd::InputError("--grid expects HxW, got '" + text + "'");
    try {
        const size_t h = std::stoul(text.substr(0, x));
        const size_t w = std::stoul(text.substr(x + 1));
        return {h, w};
    } catch (const std::exception&) {
        throw attnd::InputError("--grid expects HxW, got '" + text + "'");
    }
}

void check_model_matches_dataset(const attnd::ModelConfig& mc, const attnd::Dataset& ds,
                                 const std::string& what) {
    if (mc.vocab_size != ds.vocab.size() || mc.grid_h != ds.config.grid_h ||
        mc.grid_w != ds.config.grid_w || mc.d_visual != ds.config.d_visual) {
        throw attnd::FormatError(what + " does not match the dataset (vocab " +
                                 std::to_string(mc.vocab_size) + "/" + std::to_string(ds.vocab.size()) +
                                 ", grid " + std::to_string(mc.grid_h) + "x" + std::to_string(mc.grid_w) +
                                 "/" + std::to_string(ds.config.grid_h) + "x" +
                                 std::to_string(ds.config.grid_w) + ", d_visual " +
                                 std::to_string(mc.d_visual) + "/" + std::to_string(ds.config.d_visual) +
                                 ")");
    }
}

const std::vector<attnd::Sample>& pick_split(const attnd::Dataset& ds, const std::string& split) {
    if (split == "train") return ds.train;
    if (split == "val") return ds.val;
    throw attnd::InputError("--split must be train or val, got '" + split + "'");
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& out_dir, uint64_t seed, size_t n_train, size_t n_val,
                 const attnd::DatasetConfig& dcfg) {
    const attnd::Dataset ds = attnd::generate_dataset(n_train, n_val, dcfg, seed);
    attnd::write_dataset(ds, out_dir);

    ManifestScope manifest;
    manifest.command = "gen-data";
    manifest.path = out_dir + "/run_manifest.json";
    manifest.config = {{"n_train", n_train}, {"n_val", n_val}, {"dataset", dcfg.to_json()}};
    manifest.seed = seed;
    manifest.dataset_manifest_hash = dataset_hash(out_dir);
    for (const char* f : {"vocab.json", "codes.bin", "train.jsonl", "val.jsonl", "features.bin",
                          "manifest.json"}) {
        manifest.artifacts.push_back(out_dir + "/" + f);
    }
    manifest.write();

    const json summary = {{"out", out_dir},
                          {"seed", seed},
                          {"counts", {{"train", n_train}, {"val", n_val}}},
                          {"grid", std::to_string(dcfg.grid_h) + "x" + std::to_string(dcfg.grid_w)},
                          {"manifest_hash", manifest.dataset_manifest_hash}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& stage, const std::string& from_ckpt,
              const std::string& out_dir, const std::string& log_path,
              const attnd::ModelConfig& model_flags, const attnd::TrainConfig& tcfg,
              bool model_flags_given) {
    if (stage != "1" && stage != "2" && stage != "both") {
        throw attnd::InputError("--stage must be 1, 2 or both");
    }
    if (stage == "2" && from_ckpt.empty()) {
        throw attnd::InputError("--stage 2 requires --from with a stage-1 checkpoint");
    }

    const attnd::Dataset ds = attnd::load_dataset(data_dir);

    attnd::TrainConfig cfg = tcfg;
    cfg.checkpoint_dir = out_dir;
    fs::create_directories(out_dir);

    attnd::TrainState state;
    if (!from_ckpt.empty()) {
        state = attnd::load_checkpoint(from_ckpt);
        check_model_matches_dataset(state.params.config(), ds, "checkpoint " + from_ckpt);
        if (model_flags_given && !(state.params.config() == model_flags)) {
            throw attnd::FormatError("model flags conflict with checkpoint " + from_ckpt);
        }
    } else {
        attnd::ModelConfig mc = model_flags;
        mc.vocab_size = ds.vocab.size();
        mc.grid_h = ds.config.grid_h;
        mc.grid_w = ds.config.grid_w;
        mc.d_visual = ds.config.d_visual;
        mc.validate();
        state = attnd::init_train_state(mc, cfg);
    }

    attnd::MetricsWriter log(log_path);
    if (stage == "1" || stage == "both") {
        attnd::train_stage1(ds, cfg, state, log);
    }
    if (stage == "2" || stage == "both") {
        attnd::train_stage2(ds, cfg, state, log);
    }

    ManifestScope manifest;
    manifest.command = "train";
    manifest.path = out_dir + "/run_manifest.json";
    manifest.config = {{"model", state.params.config().to_json()},
                       {"train", cfg.to_json()},
                       {"stage", stage},
                       {"from", from_ckpt},
                       {"data", data_dir}};
    manifest.seed = cfg.seed;
    manifest.dataset_manifest_hash = dataset_hash(data_dir);
    manifest.artifacts.push_back(log_path);
    if (stage != "2") manifest.artifacts.push_back(out_dir + "/stage1.ckpt");
    if (stage != "1") manifest.artifacts.push_back(out_dir + "/stage2.ckpt");
    manifest.write();

    const json summary = {{"out", out_dir},
                          {"log", log_path},
                          {"stage", stage},
                          {"final_val_best", state.best_val}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_eval_or_ablate(bool do_ablation, const std::string& ckpt, const std::string& data_dir,
                       const std::string& split, const std::string& out_file,
                       const std::string& manifest_path) {
    const attnd::Dataset ds = attnd::load_dataset(data_dir);
    const attnd::TrainState state = attnd::load_checkpoint(ckpt);
    check_model_matches_dataset(state.params.config(), ds, "checkpoint " + ckpt);
    const auto& samples = pick_split(ds, split);

    json report;
    if (do_ablation) {
        report = attnd::ablation(state.params, samples).to_json();
    } else {
        report = attnd::evaluate(state.params, samples).to_json();
    }
    const std::string text = report.dump() + "\n";
    std::cout << text;
    if (!out_file.empty()) attnd::write_file_text(out_file, text);

    ManifestScope manifest;
    manifest.command = do_ablation ? "ablate" : "eval";
    manifest.path = manifest_path;
    manifest.config = {{"ckpt", ckpt}, {"data", data_dir}, {"split", split}, {"out", out_file}};
    manifest.dataset_manifest_hash = dataset_hash(data_dir);
    if (!out_file.empty()) manifest.artifacts.push_back(out_file);
    manifest.write();
    return 0;
}

int cmd_viz(const std::string& baseline, const std::string& distilled, const std::string& data_dir,
            const std::string& split, size_t n_samples, const std::string& out_dir) {
    const attnd::Dataset ds = attnd::load_dataset(data_dir);
    {
        const attnd::TrainState b = attnd::load_checkpoint(baseline);
        check_model_matches_dataset(b.params.config(), ds, "checkpoint " + baseline);
    }
    const attnd::CompareReport report =
        attnd::compare_checkpoints(baseline, distilled, pick_split(ds, split), n_samples, out_dir);
    attnd::write_file_text(out_dir + "/summary.json", report.to_json().dump(2) + "\n");

    ManifestScope manifest;
    manifest.command = "viz";
    manifest.path = out_dir + "/run_manifest.json";
    manifest.config = {{"baseline", baseline}, {"distilled", distilled},  {"data", data_dir},
                       {"split", split},       {"samples", n_samples}};
    manifest.dataset_manifest_hash = dataset_hash(data_dir);
    manifest.artifacts.push_back(out_dir + "/summary.json");
    manifest.write();

    std::cout << report.to_json().dump() << "\n";
    return 0;
}

int cmd_selfcheck(const std::string& inject_fault) {
    const attnd::SelfCheckResult result = attnd::run_selfcheck(inject_fault);
    for (const auto& item : result.items) {
        std::cout << (item.pass ? "ok   " : "FAIL ") << item.name << " (" << item.detail << ")\n";
    }
    if (const attnd::SelfCheckItem* failure = result.first_failure()) {
        std::cout << "selfcheck: FAIL " << failure->name << "\n";
        return 1;
    }
    std::cout << "selfcheck: pass\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"grid VQA with reasoning-guided attention distillation"};
    app.require_subcommand(1);

    // gen-data ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    std::string gen_out, gen_grid = "8x8", gen_config;
    uint64_t gen_seed = 1;
    size_t gen_train = 4000, gen_val = 1000;
    attnd::DatasetConfig dcfg;
    gen->add_option("--out", gen_out, "output directory")->required();
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generation seed");
    auto* gen_train_opt = gen->add_option("--train", gen_train, "training samples");
    auto* gen_val_opt = gen->add_option("--val", gen_val, "validation samples");
    auto* gen_grid_opt = gen->add_option("--grid", gen_grid, "grid size HxW");
    auto* gen_dv_opt = gen->add_option("--d-visual", dcfg.d_visual, "feature channels");
    auto* gen_noise_opt = gen->add_option("--noise", dcfg.noise_sigma, "feature noise sigma");
    gen->add_option("--config", gen_config, "JSON config file (flags win)");

    // train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "run the two-stage training schedule");
    std::string tr_data, tr_stage = "both", tr_from, tr_out = "run", tr_log, tr_config;
    attnd::ModelConfig mcfg;
    attnd::TrainConfig tcfg;
    long long tr_epochs = -1;
    train->add_option("--data", tr_data, "dataset directory")->required();
    train->add_option("--stage", tr_stage, "1, 2 or both");
    train->add_option("--from", tr_from, "checkpoint to start from");
    train->add_option("--out", tr_out, "checkpoint/output directory");
    train->add_option("--log", tr_log, "metrics log path (default <out>/metrics.jsonl)");
    auto* tr_seed_opt = train->add_option("--seed", tcfg.seed, "training seed");
    auto* tr_s1_opt = train->add_option("--stage1-epochs", tcfg.stage1_epochs, "stage-1 epochs");
    auto* tr_s2_opt = train->add_option("--stage2-epochs", tcfg.stage2_epochs, "stage-2 epochs");
    train->add_option("--epochs", tr_epochs, "epoch count for the single selected stage");
    auto* tr_bs_opt = train->add_option("--batch-size", tcfg.batch_size, "minibatch size");
    auto* tr_lr1_opt = train->add_option("--lr1", tcfg.opt_stage1.lr, "stage-1 learning rate");
    auto* tr_lr2_opt = train->add_option("--lr2", tcfg.opt_stage2.lr, "stage-2 learning rate");
    std::string tr_optimizer = "adam";
    auto* tr_optkind_opt = train->add_option("--optimizer", tr_optimizer, "adam or sgd");
    auto* tr_clip_opt = train->add_option("--clip-norm", tcfg.clip_norm, "global gradient norm clip");
    auto* tr_klscale_opt = train->add_option("--kl-scale", tcfg.kl_scale, "stage-2 alignment weight");
    auto* tr_trainlang_opt = train->add_flag("--train-language", tcfg.stage2_train_language,
                                             "also finetune the language stream in stage 2");
    auto* tr_logevery_opt = train->add_option("--log-every", tcfg.log_every, "steps between log lines");
    auto* tr_dmodel_opt = train->add_option("--d-model", mcfg.d_model, "embedding width");
    auto* tr_heads_opt = train->add_option("--n-heads", mcfg.n_heads, "attention heads");
    auto* tr_enc_opt = train->add_option("--enc-layers", mcfg.n_enc_layers, "encoder depth");
    auto* tr_dec_opt = train->add_option("--dec-layers", mcfg.n_dec_layers, "decoder depth");
    auto* tr_seq_opt = train->add_option("--max-seq-len", mcfg.max_seq_len, "language sequence cap");
    train->add_option("--config", tr_config, "JSON config file (flags win)");

    // eval / ablate ------------------------------------------------------------
    std::string ev_ckpt, ev_data, ev_split = "val", ev_out, ev_manifest = "run_manifest.json";
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--split", ev_split);
    ev->add_option("--out", ev_out, "also write the JSON report here");
    ev->add_option("--manifest", ev_manifest, "run manifest path");

    std::string ab_ckpt, ab_data, ab_split = "val", ab_out, ab_manifest = "run_manifest.json";
    auto* ab = app.add_subcommand("ablate", "object-masking ablation on a split");
    ab->add_option("--ckpt", ab_ckpt)->required();
    ab->add_option("--data", ab_data)->required();
    ab->add_option("--split", ab_split);
    ab->add_option("--out", ab_out, "also write the JSON report here");
    ab->add_option("--manifest", ab_manifest, "run manifest path");

    // viz ----------------------------------------------------------------------
    std::string vz_base, vz_dist, vz_data, vz_split = "val", vz_out;
    size_t vz_samples = 8;
    auto* vz = app.add_subcommand("viz", "paired attention heatmaps for two checkpoints");
    vz->add_option("--baseline", vz_base)->required();
    vz->add_option("--distilled", vz_dist)->required();
    vz->add_option("--data", vz_data)->required();
    vz->add_option("--split", vz_split);
    vz->add_option("--samples", vz_samples);
    vz->add_option("--out", vz_out)->required();

    // selfcheck ------------------------------------------------------------------
    std::string sc_fault;
    auto* sc = app.add_subcommand("selfcheck", "run the fast invariant suite");
    sc->add_option("--inject-fault", sc_fault, "test fixture: corrupt a named check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) {
            const json file_cfg = load_config_file(gen_config);
            merge_option(file_cfg, "seed", gen_seed_opt, gen_seed);
            merge_option(file_cfg, "train", gen_train_opt, gen_train);
            merge_option(file_cfg, "val", gen_val_opt, gen_val);
            merge_option(file_cfg, "grid", gen_grid_opt, gen_grid);
            merge_option(file_cfg, "d_visual", gen_dv_opt, dcfg.d_visual);
            merge_option(file_cfg, "noise_sigma", gen_noise_opt, dcfg.noise_sigma);
            std::tie(dcfg.grid_h, dcfg.grid_w) = parse_grid(gen_grid);
            dcfg.validate();
            return cmd_gen_data(gen_out, gen_seed, gen_train, gen_val, dcfg);
        }
        if (train->parsed()) {
            const json file_cfg = load_config_file(tr_config);
            const json model_cfg = file_cfg.value("model", json::object());
            const json train_cfg = file_cfg.value("train", json::object());
            merge_option(train_cfg, "seed", tr_seed_opt, tcfg.seed);
            merge_option(train_cfg, "stage1_epochs", tr_s1_opt, tcfg.stage1_epochs);
            merge_option(train_cfg, "stage2_epochs", tr_s2_opt, tcfg.stage2_epochs);
            merge_option(train_cfg, "batch_size", tr_bs_opt, tcfg.batch_size);
            merge_option(train_cfg, "lr1", tr_lr1_opt, tcfg.opt_stage1.lr);
            merge_option(train_cfg, "lr2", tr_lr2_opt, tcfg.opt_stage2.lr);
            merge_option(train_cfg, "optimizer", tr_optkind_opt, tr_optimizer);
            merge_option(train_cfg, "clip_norm", tr_clip_opt, tcfg.clip_norm);
            merge_option(train_cfg, "kl_scale", tr_klscale_opt, tcfg.kl_scale);
            merge_option(train_cfg, "stage2_train_language", tr_trainlang_opt,
                         tcfg.stage2_train_language);
            merge_option(train_cfg, "log_every", tr_logevery_opt, tcfg.log_every);
            merge_option(model_cfg, "d_model", tr_dmodel_opt, mcfg.d_model);
            merge_option(model_cfg, "n_heads", tr_heads_opt, mcfg.n_heads);
            merge_option(model_cfg, "n_enc_layers", tr_enc_opt, mcfg.n_enc_layers);
            merge_option(model_cfg, "n_dec_layers", tr_dec_opt, mcfg.n_dec_layers);
            merge_option(model_cfg, "max_seq_len", tr_seq_opt, mcfg.max_seq_len);
            tcfg.opt_stage1.kind = tr_optimizer;
            tcfg.opt_stage2.kind = tr_optimizer;
            if (tr_epochs >= 0) {
                if (tr_stage == "both") {
                    throw attnd::InputError("--epochs needs --stage 1 or --stage 2; "
                                            "use --stage1-epochs/--stage2-epochs with --stage both");
                }
                (tr_stage == "1" ? tcfg.stage1_epochs : tcfg.stage2_epochs) =
                    static_cast<size_t>(tr_epochs);
            }
            const bool model_flags_given = tr_dmodel_opt->count() || tr_heads_opt->count() ||
                                           tr_enc_opt->count() || tr_dec_opt->count() ||
                                           tr_seq_opt->count();
            if (tr_log.empty()) tr_log = tr_out + "/metrics.jsonl";
            return cmd_train(tr_data, tr_stage, tr_from, tr_out, tr_log, mcfg, tcfg,
                             model_flags_given);
        }
        if (ev->parsed()) {
            return cmd_eval_or_ablate(false, ev_ckpt, ev_data, ev_split, ev_out, ev_manifest);
        }
        if (ab->parsed()) {
            return cmd_eval_or_ablate(true, ab_ckpt, ab_data, ab_split, ab_out, ab_manifest);
        }
        if (vz->parsed()) {
            return cmd_viz(vz_base, vz_dist, vz_data, vz_split, vz_samples, vz_out);
        }
        if (sc->parsed()) {
            return cmd_selfcheck(sc_fault);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return code_for(e);
    }
    return 2;
}
