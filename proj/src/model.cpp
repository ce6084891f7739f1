#include "attnd/model.hpp"

#include <cmath>

#include "attnd/errors.hpp"
#include "attnd/ops.hpp"
#include "attnd/rng.hpp"

namespace attnd {

using namespace ops;

void ModelConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw InputError("d_model must be a positive multiple of n_heads");
    }
    if (n_enc_layers == 0 || n_dec_layers == 0) throw InputError("layer counts must be positive");
    if (d_visual == 0 || grid_h == 0 || grid_w == 0) throw InputError("visual dimensions must be positive");
    if (vocab_size == 0) throw InputError("vocab_size must be set");
    if (max_seq_len < 4) throw InputError("max_seq_len too small");
    if (ln_eps <= 0.0) throw InputError("ln_eps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"d_model", d_model},       {"n_heads", n_heads},
            {"n_enc_layers", n_enc_layers}, {"n_dec_layers", n_dec_layers},
            {"d_visual", d_visual},     {"grid_h", grid_h},
            {"grid_w", grid_w},         {"vocab_size", vocab_size},
            {"max_seq_len", max_seq_len}, {"ln_eps", ln_eps}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<size_t>();
    c.n_heads = j.at("n_heads").get<size_t>();
    c.n_enc_layers = j.at("n_enc_layers").get<size_t>();
    c.n_dec_layers = j.at("n_dec_layers").get<size_t>();
    c.d_visual = j.at("d_visual").get<size_t>();
    c.grid_h = j.at("grid_h").get<size_t>();
    c.grid_w = j.at("grid_w").get<size_t>();
    c.vocab_size = j.at("vocab_size").get<size_t>();
    c.max_seq_len = j.at("max_seq_len").get<size_t>();
    c.ln_eps = j.at("ln_eps").get<double>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr double kInitStd = 0.02;

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config_ = cfg;

    auto weight = [&](const std::string& name, std::vector<size_t> shape) {
        Tensor t(std::move(shape), 0.0, true);
        Rng r = Rng::derive(seed, fnv1a(name));
        for (double& v : t.data()) v = kInitStd * r.normal();
        p.map_.emplace(name, std::move(t));
    };
    auto zeros = [&](const std::string& name, std::vector<size_t> shape) {
        p.map_.emplace(name, Tensor(std::move(shape), 0.0, true));
    };
    auto ones = [&](const std::string& name, std::vector<size_t> shape) {
        p.map_.emplace(name, Tensor(std::move(shape), 1.0, true));
    };

    const size_t d = cfg.d_model;
    auto attention_block = [&](const std::string& prefix) {
        for (const char* m : {"wq", "wk", "wv", "wo"}) weight(prefix + "." + m, {d, d});
        for (const char* m : {"bq", "bk", "bv", "bo"}) zeros(prefix + "." + m, {d});
    };
    auto norm = [&](const std::string& prefix) {
        ones(prefix + ".g", {d});
        zeros(prefix + ".b", {d});
    };
    auto mlp_block = [&](const std::string& prefix) {
        weight(prefix + ".w1", {d, cfg.mlp_hidden()});
        zeros(prefix + ".b1", {cfg.mlp_hidden()});
        weight(prefix + ".w2", {cfg.mlp_hidden(), d});
        zeros(prefix + ".b2", {d});
    };

    weight("lang.tok_emb", {cfg.vocab_size, d});
    weight("lang.pos_emb", {cfg.max_seq_len, d});
    for (size_t i = 0; i < cfg.n_enc_layers; ++i) {
        const std::string l = "lang.enc" + std::to_string(i);
        norm(l + ".ln1");
        attention_block(l + ".attn");
        norm(l + ".ln2");
        mlp_block(l + ".mlp");
    }
    norm("lang.final_ln");
    weight("lang.pooler.w", {d, d});
    zeros("lang.pooler.b", {d});

    for (const char* dec : {"qdec", "rdec"}) {
        const std::string base(dec);
        weight(base + ".cls_query", {1, d});
        weight(base + ".pos_emb", {cfg.max_seq_len, d});
        weight(base + ".feat_proj.w", {cfg.d_visual, d});
        zeros(base + ".feat_proj.b", {d});
        for (size_t i = 0; i < cfg.n_dec_layers; ++i) {
            const std::string l = base + ".dec" + std::to_string(i);
            norm(l + ".ln1");
            attention_block(l + ".self");
            norm(l + ".ln2");
            attention_block(l + ".cross");
            norm(l + ".ln3");
            mlp_block(l + ".mlp");
        }
        norm(base + ".final_ln");
        weight(base + ".att_proj.w", {cfg.d_visual, d});
        zeros(base + ".att_proj.b", {d});
        weight(base + ".score.w", {d, 1});
        zeros(base + ".score.b", {1});
    }

    weight("geom.emb", {cfg.grid_h * cfg.grid_w, d});
    return p;
}

Tensor& ModelParams::at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw StateError("unknown parameter " + name);
    return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw StateError("unknown parameter " + name);
    return it->second;
}

ParamGroup ModelParams::group_of(const std::string& name) {
    if (name.rfind("lang.", 0) == 0) return ParamGroup::Language;
    if (name.rfind("qdec.", 0) == 0) return ParamGroup::QuestionDecoder;
    if (name.rfind("rdec.", 0) == 0) return ParamGroup::ReasoningDecoder;
    if (name.rfind("geom.", 0) == 0) return ParamGroup::Geometric;
    throw StateError("parameter " + name + " belongs to no group");
}

std::vector<std::string> ModelParams::names_in_group(ParamGroup g) const {
    std::vector<std::string> names;
    for (const auto& [name, _] : map_) {
        if (group_of(name) == g) names.push_back(name);
    }
    return names;
}

void ModelParams::set_group_trainable(ParamGroup g, bool trainable) {
    for (auto& [name, tensor] : map_) {
        if (group_of(name) == g) tensor.set_requires_grad(trainable);
    }
}

bool ModelParams::group_trainable(ParamGroup g) const {
    for (const auto& [name, tensor] : map_) {
        if (group_of(name) == g) return tensor.requires_grad();
    }
    return false;
}

void ModelParams::zero_grad_all() {
    for (auto& [_, tensor] : map_) {
        if (tensor.requires_grad()) tensor.zero_grad();
    }
}

size_t ModelParams::scalar_count() const {
    size_t n = 0;
    for (const auto& [_, tensor] : map_) n += tensor.size();
    return n;
}

ModelParams ModelParams::detached_copy() const {
    ModelParams p;
    p.config_ = config_;
    for (const auto& [name, tensor] : map_) {
        p.map_.emplace(name, tensor.clone_detached());
    }
    return p;
}

ModelParams ModelParams::from_tensors(const ModelConfig& cfg, std::map<std::string, Tensor> tensors) {
    const ModelParams reference = ModelParams::init(cfg, 0);
    for (const auto& [name, tensor] : reference.tensors()) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError("checkpoint is missing parameter " + name);
        if (it->second.shape() != tensor.shape()) {
            throw FormatError("parameter " + name + " has shape " + it->second.shape_str() +
                              ", config requires " + tensor.shape_str());
        }
    }
    if (tensors.size() != reference.tensors().size()) {
        throw FormatError("checkpoint carries unexpected extra parameters");
    }
    ModelParams p;
    p.config_ = cfg;
    p.map_ = std::move(tensors);
    for (auto& [_, tensor] : p.map_) tensor.set_requires_grad(true);
    return p;
}

// ---------------------------------------------------------------------------
// Blocks

namespace {

struct MhaResult {
    Tensor out;                     // [Tq x d]
    std::vector<Tensor> head_attn;  // per head, [Tq x Tk] softmax rows
};

MhaResult multi_head_attention(const Tensor& queries_in, const Tensor& memory,
                               const ModelParams& p, const std::string& prefix,
                               const ModelConfig& cfg) {
    const size_t d = cfg.d_model, dh = cfg.head_dim();
    Tensor q = add_row(matmul(queries_in, p.at(prefix + ".wq")), p.at(prefix + ".bq"));
    Tensor k = add_row(matmul(memory, p.at(prefix + ".wk")), p.at(prefix + ".bk"));
    Tensor v = add_row(matmul(memory, p.at(prefix + ".wv")), p.at(prefix + ".bv"));

    MhaResult res;
    Tensor merged;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (size_t h = 0; h < cfg.n_heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor attn = softmax_last(scale(matmul(qh, transpose(kh)), inv_sqrt));
        res.head_attn.push_back(attn);
        Tensor ctx = matmul(attn, vh);
        // sum of per-head projections == concat(heads) @ wo
        Tensor proj = matmul(ctx, slice_rows(p.at(prefix + ".wo"), h * dh, (h + 1) * dh));
        merged = h == 0 ? proj : add(merged, proj);
    }
    res.out = add_row(merged, p.at(prefix + ".bo"));
    (void)d;
    return res;
}

Tensor mlp(const Tensor& x, const ModelParams& p, const std::string& prefix) {
    Tensor h = gelu(add_row(matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
    return add_row(matmul(h, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

Tensor norm(const Tensor& x, const ModelParams& p, const std::string& prefix, const ModelConfig& cfg) {
    return ops::layer_norm(x, p.at(prefix + ".g"), p.at(prefix + ".b"), cfg.ln_eps);
}

}  // namespace

Tensor encode_language(const std::vector<int>& question_ids, const std::vector<int>& answer_ids,
                       const ModelParams& params, const ModelConfig& cfg) {
    std::vector<int> seq;
    seq.reserve(question_ids.size() + answer_ids.size() + 3);
    seq.push_back(Vocabulary::kCls);
    seq.insert(seq.end(), question_ids.begin(), question_ids.end());
    seq.push_back(Vocabulary::kSep);
    seq.insert(seq.end(), answer_ids.begin(), answer_ids.end());
    seq.push_back(Vocabulary::kSep);
    if (seq.size() > cfg.max_seq_len) {
        throw InputError("language sequence length " + std::to_string(seq.size()) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len) +
                         "; truncation is not supported");
    }

    Tensor x = add(embedding(params.at("lang.tok_emb"), seq),
                   slice_rows(params.at("lang.pos_emb"), 0, seq.size()));
    for (size_t i = 0; i < cfg.n_enc_layers; ++i) {
        const std::string l = "lang.enc" + std::to_string(i);
        Tensor normed = norm(x, params, l + ".ln1", cfg);
        x = add(x, multi_head_attention(normed, normed, params, l + ".attn", cfg).out);
        x = add(x, mlp(norm(x, params, l + ".ln2", cfg), params, l + ".mlp"));
    }
    x = norm(x, params, "lang.final_ln", cfg);
    Tensor cls_row = slice_rows(x, 0, 1);
    Tensor pooled = tanh_t(add_row(matmul(cls_row, params.at("lang.pooler.w")), params.at("lang.pooler.b")));
    return reshape(pooled, {cfg.d_model});
}

DecodeResult cross_attention_decode(const std::vector<int>& query_token_ids, const FeatureGrid& grid,
                                    const ModelParams& params, const ModelConfig& cfg,
                                    ParamGroup branch) {
    if (branch != ParamGroup::QuestionDecoder && branch != ParamGroup::ReasoningDecoder) {
        throw InputError("cross_attention_decode: branch must name one of the two decoders");
    }
    if (grid.h != cfg.grid_h || grid.w != cfg.grid_w || grid.depth() != cfg.d_visual) {
        throw DimensionError("feature grid " + grid.features.shape_str() + " does not match config " +
                             std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w) + "x" +
                             std::to_string(cfg.d_visual));
    }
    const std::string base = branch == ParamGroup::QuestionDecoder ? "qdec" : "rdec";
    const size_t n_q = query_token_ids.size() + 1;
    if (n_q > cfg.max_seq_len) {
        throw InputError("decoder query length " + std::to_string(n_q) + " exceeds max_seq_len " +
                         std::to_string(cfg.max_seq_len));
    }

    Tensor queries = concat_rows(params.at(base + ".cls_query"),
                                 embedding(params.at("lang.tok_emb"), query_token_ids));
    queries = add(queries, slice_rows(params.at(base + ".pos_emb"), 0, n_q));

    Tensor memory = add(add_row(matmul(grid.tokens(), params.at(base + ".feat_proj.w")),
                                params.at(base + ".feat_proj.b")),
                        params.at("geom.emb"));

    Tensor x = queries;
    std::vector<Tensor> last_cross_attn;
    for (size_t i = 0; i < cfg.n_dec_layers; ++i) {
        const std::string l = base + ".dec" + std::to_string(i);
        Tensor normed = norm(x, params, l + ".ln1", cfg);
        x = add(x, multi_head_attention(normed, normed, params, l + ".self", cfg).out);
        MhaResult cross =
            multi_head_attention(norm(x, params, l + ".ln2", cfg), memory, params, l + ".cross", cfg);
        x = add(x, cross.out);
        x = add(x, mlp(norm(x, params, l + ".ln3", cfg), params, l + ".mlp"));
        if (i + 1 == cfg.n_dec_layers) last_cross_attn = std::move(cross.head_attn);
    }

    Tensor alpha_row;  // mean over heads of the [CLS] cross-attention row
    for (size_t h = 0; h < cfg.n_heads; ++h) {
        Tensor row = slice_rows(last_cross_attn[h], 0, 1);
        alpha_row = h == 0 ? row : add(alpha_row, row);
    }
    alpha_row = scale(alpha_row, 1.0 / static_cast<double>(cfg.n_heads));

    DecodeResult res;
    res.alpha = AttentionMap(reshape(alpha_row, {grid.h, grid.w}));
    res.decoded = norm(x, params, base + ".final_ln", cfg);
    return res;
}

Tensor attended_representation(const AttentionMap& alpha, const FeatureGrid& grid,
                               const Tensor& proj_w, const Tensor& proj_b) {
    const size_t cells = alpha.h() * alpha.w();
    if (cells != grid.h * grid.w) {
        throw DimensionError("attention map does not match grid size");
    }
    Tensor pooled = matmul(reshape(alpha.weights, {1, cells}), grid.tokens());
    Tensor v = add_row(matmul(pooled, proj_w), proj_b);
    return reshape(v, {proj_w.dim(1)});
}

Tensor fuse_and_score(const Tensor& x_cls, const Tensor& v, const Tensor& head_w,
                      const Tensor& head_b) {
    if (x_cls.shape() != v.shape()) {
        throw DimensionError("fuse_and_score: shape mismatch " + x_cls.shape_str() + " vs " +
                             v.shape_str());
    }
    Tensor fused = mul(x_cls, v);
    Tensor logit = add_row(matmul(reshape(fused, {1, fused.size()}), head_w), head_b);
    return reshape(logit, {1});
}

namespace {

Tensor candidate_distribution(const std::vector<Tensor>& logits) {
    Tensor stacked;
    for (size_t k = 0; k < logits.size(); ++k) {
        Tensor row = reshape(logits[k], {1, 1});
        stacked = k == 0 ? row : concat_rows(stacked, row);
    }
    return reshape(softmax(reshape(stacked, {1, logits.size()}), 1), {logits.size()});
}

}  // namespace

ForwardOutput forward(const Sample& sample, const ModelParams& params, const ModelConfig& cfg,
                      ForwardMode mode) {
    if (mode == ForwardMode::Train && sample.rationale_ids.empty()) {
        throw InputError("train-mode forward requires a rationale");
    }

    ForwardOutput out;
    out.x_cls.reserve(ModelConfig::n_candidates);
    for (size_t k = 0; k < ModelConfig::n_candidates; ++k) {
        out.x_cls.push_back(encode_language(sample.question_ids, sample.candidate_ids[k], params, cfg));
    }

    DecodeResult qdec = cross_attention_decode(sample.question_ids, sample.grid, params, cfg,
                                               ParamGroup::QuestionDecoder);
    out.alpha_q = qdec.alpha;
    out.v_q = attended_representation(out.alpha_q, sample.grid, params.at("qdec.att_proj.w"),
                                      params.at("qdec.att_proj.b"));
    std::vector<Tensor> logits_q;
    for (size_t k = 0; k < ModelConfig::n_candidates; ++k) {
        logits_q.push_back(
            fuse_and_score(out.x_cls[k], out.v_q, params.at("qdec.score.w"), params.at("qdec.score.b")));
    }
    out.y_q = candidate_distribution(logits_q);

    if (mode == ForwardMode::Train) {
        DecodeResult rdec = cross_attention_decode(sample.rationale_ids, sample.grid, params, cfg,
                                                   ParamGroup::ReasoningDecoder);
        out.alpha_r = rdec.alpha;
        out.v_r = attended_representation(*out.alpha_r, sample.grid, params.at("rdec.att_proj.w"),
                                          params.at("rdec.att_proj.b"));
        std::vector<Tensor> logits_r;
        for (size_t k = 0; k < ModelConfig::n_candidates; ++k) {
            logits_r.push_back(fuse_and_score(out.x_cls[k], *out.v_r, params.at("rdec.score.w"),
                                              params.at("rdec.score.b")));
        }
        out.y_r = candidate_distribution(logits_r);
    }
    return out;
}

}  // namespace attnd
