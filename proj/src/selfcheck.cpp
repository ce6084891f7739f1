#include "attnd/selfcheck.hpp"

#include <cmath>
#include <sstream>

#include "attnd/dataset.hpp"
#include "attnd/gradcheck.hpp"
#include "attnd/losses.hpp"
#include "attnd/ops.hpp"
#include "attnd/rng.hpp"
#include "attnd/trainer.hpp"

namespace attnd {

namespace {

constexpr double kLn4 = 1.3862943611198906;

DatasetConfig micro_dataset_config() {
    DatasetConfig cfg;
    cfg.grid_h = 4;
    cfg.grid_w = 4;
    cfg.d_visual = 8;
    cfg.noise_sigma = 0.1;
    return cfg;
}

ModelConfig micro_model_config(const Dataset& ds) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_enc_layers = 1;
    cfg.n_dec_layers = 1;
    cfg.d_visual = ds.config.d_visual;
    cfg.grid_h = ds.config.grid_h;
    cfg.grid_w = ds.config.grid_w;
    cfg.vocab_size = ds.vocab.size();
    cfg.max_seq_len = 24;
    return cfg;
}

SelfCheckItem check(const std::string& name, bool pass, const std::string& detail) {
    return SelfCheckItem{name, pass, detail};
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

}  // namespace

SelfCheckResult run_selfcheck(const std::string& inject_fault) {
    SelfCheckResult result;
    const double kl_sign = inject_fault == "kl-sign" ? -1.0 : 1.0;

    // softmax closed forms
    {
        Tensor z({4}, {0.0, 0.0, 0.0, 0.0});
        Tensor s = ops::softmax_last(z);
        double err = 0.0;
        for (double v : s.data()) err = std::max(err, std::fabs(v - 0.25));
        Tensor l({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
        Tensor s2 = ops::softmax_last(l);
        for (size_t i = 0; i < 3; ++i) {
            err = std::max(err, std::fabs(s2.at(i) - static_cast<double>(i + 1) / 6.0));
        }
        result.items.push_back(check("softmax closed forms", err <= 1e-12, "max_err=" + fmt(err)));
    }

    // cross-entropy closed forms
    {
        Tensor uniform({4}, {0.25, 0.25, 0.25, 0.25});
        const double ce = cross_entropy(uniform, 2).value();
        Tensor onehot({4}, {0.0, 1.0, 0.0, 0.0});
        const double ce0 = cross_entropy(onehot, 1).value();
        const double err = std::max(std::fabs(ce - kLn4), std::fabs(ce0));
        result.items.push_back(check("cross_entropy closed forms", err <= 1e-9, "max_err=" + fmt(err)));
    }

    // forward KL closed forms
    {
        Tensor p({4}, {1.0, 0.0, 0.0, 0.0});
        Tensor q({4}, {0.25, 0.25, 0.25, 0.25});
        const double kl = ops::forward_kl(p, q).value();
        const double kl_same = ops::forward_kl(q, q).value();
        const double err = std::max(std::fabs(kl - kLn4), std::fabs(kl_same));
        result.items.push_back(check("forward_kl closed forms", err <= 1e-9, "max_err=" + fmt(err)));
    }

    // forward KL nonnegativity over random simplex pairs
    {
        Rng rng(41);
        double min_kl = 0.0;
        for (int trial = 0; trial < 200; ++trial) {
            const size_t n = 2 + rng.uniform_int(30);
            auto simplex = [&]() {
                std::vector<double> v(n);
                double sum = 0.0;
                for (double& x : v) {
                    x = -std::log(std::max(rng.uniform01(), 1e-300));
                    sum += x;
                }
                for (double& x : v) x /= sum;
                return v;
            };
            Tensor p({n}, simplex());
            Tensor q({n}, simplex());
            min_kl = std::min(min_kl, kl_sign * ops::forward_kl(p, q).value());
        }
        result.items.push_back(check("forward_kl nonnegativity", min_kl >= -1e-12,
                                     "min_kl=" + fmt(min_kl)));
    }

    // gradient checks on primitives and a softmax+KL composite
    {
        Rng rng(7);
        auto randn = [&](std::vector<size_t> shape) {
            Tensor t(std::move(shape), 0.0, true);
            for (double& v : t.data()) v = rng.normal();
            return t;
        };
        double worst = 0.0;
        {
            Tensor b = randn({4, 3});
            b.set_requires_grad(false);
            auto f = [&](const Tensor& a) { return ops::sum_all(ops::matmul(a, b)); };
            worst = std::max(worst, grad_check(f, randn({3, 4}), 1e-5, 1e-6).max_rel_err);
        }
        {
            Tensor gain = randn({5});
            gain.set_requires_grad(false);
            Tensor bias = randn({5});
            bias.set_requires_grad(false);
            auto f = [&](const Tensor& x) {
                return ops::sum_all(ops::mul(ops::layer_norm(x, gain, bias), x));
            };
            worst = std::max(worst, grad_check(f, randn({3, 5}), 1e-5, 1e-5).max_rel_err);
        }
        {
            Tensor target({6}, {0.5, 0.1, 0.1, 0.1, 0.1, 0.1});
            auto f = [&](const Tensor& x) { return ops::forward_kl(ops::softmax_last(x), target); };
            worst = std::max(worst, grad_check(f, randn({6}), 1e-5, 1e-5).max_rel_err);
        }
        result.items.push_back(check("gradient checks", worst <= 1e-5, "max_rel_err=" + fmt(worst)));
    }

    // attention normalization on random micro forwards
    Dataset micro = generate_dataset(16, 8, micro_dataset_config(), 23);
    const ModelConfig mcfg = micro_model_config(micro);
    {
        double worst_sum_err = 0.0;
        double min_weight = 0.0;
        for (uint64_t trial = 0; trial < 8; ++trial) {
            ModelParams params = ModelParams::init(mcfg, 100 + trial);
            const Sample& s = micro.train[trial % micro.train.size()];
            const ForwardOutput out = forward(s, params, mcfg, ForwardMode::Train);
            for (const AttentionMap* a : {&out.alpha_q, &*out.alpha_r}) {
                worst_sum_err = std::max(worst_sum_err, std::fabs(a->sum() - 1.0));
                for (double v : a->weights.data()) min_weight = std::min(min_weight, v);
            }
        }
        result.items.push_back(check("attention normalization",
                                     worst_sum_err <= 1e-6 && min_weight >= 0.0,
                                     "sum_err=" + fmt(worst_sum_err) + " min=" + fmt(min_weight)));
    }

    // stage-2 freezing on a 2-step run over the micro-dataset
    {
        TrainConfig tcfg;
        tcfg.stage1_epochs = 0;
        tcfg.stage2_epochs = 1;
        tcfg.batch_size = 8;  // 16 samples -> 2 optimizer steps
        tcfg.seed = 5;
        tcfg.log_every = 1;
        TrainState state = init_train_state(mcfg, tcfg);
        std::vector<std::pair<std::string, std::vector<double>>> before;
        for (const auto& name : state.params.names_in_group(ParamGroup::ReasoningDecoder)) {
            before.emplace_back(name, state.params.at(name).data());
        }
        MetricsWriter log;
        train_stage2(micro, tcfg, state, log);
        bool identical = true;
        for (const auto& [name, data] : before) {
            if (state.params.at(name).data() != data) identical = false;
        }
        result.items.push_back(check("stage-2 reasoning-decoder freezing", identical,
                                     identical ? "bit-identical" : "parameters moved"));
    }

    return result;
}

}  // namespace attnd
