#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnd/dataset.hpp"
#include "attnd/grid.hpp"
#include "attnd/tensor.hpp"

namespace attnd {

/// Widths and depths of the two-stream architecture. Defaults are the
/// desk-scale geometry; everything is configurable.
struct ModelConfig {
    size_t d_model = 64;
    size_t n_heads = 4;
    size_t n_enc_layers = 2;
    size_t n_dec_layers = 2;
    size_t d_visual = 32;
    size_t grid_h = 8;
    size_t grid_w = 8;
    size_t vocab_size = 0;
    size_t max_seq_len = 32;
    double ln_eps = 1e-5;
    static constexpr size_t n_candidates = 4;

    size_t head_dim() const { return d_model / n_heads; }
    size_t mlp_hidden() const { return 4 * d_model; }

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

/// Parameter partition. Language, question-decoder and reasoning-decoder
/// groups are disjoint; the geometric embedding table is shared by both
/// decoders and sits in its own group.
enum class ParamGroup { Language, QuestionDecoder, ReasoningDecoder, Geometric };

/// All learnable tensors, keyed by dotted names ("lang.enc0.attn.wq", ...).
/// Initialization is per-name seeded, so values do not depend on creation
/// order. Freezing a group drops requires_grad on its tensors, which prunes
/// those subgraphs at record time.
class ModelParams {
public:
    ModelParams() = default;

    static ModelParams init(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return config_; }

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return map_.count(name) > 0; }

    std::map<std::string, Tensor>& tensors() { return map_; }
    const std::map<std::string, Tensor>& tensors() const { return map_; }

    static ParamGroup group_of(const std::string& name);
    std::vector<std::string> names_in_group(ParamGroup g) const;

    void set_group_trainable(ParamGroup g, bool trainable);
    bool group_trainable(ParamGroup g) const;
    void zero_grad_all();

    /// Number of scalar parameters.
    size_t scalar_count() const;

    /// Value-only copy with requires_grad off everywhere; forwards on it
    /// record no graph.
    ModelParams detached_copy() const;

    static ModelParams from_tensors(const ModelConfig& cfg, std::map<std::string, Tensor> tensors);

private:
    ModelConfig config_;
    std::map<std::string, Tensor> map_;
};

enum class ForwardMode { Train, Test };

struct ForwardOutput {
    std::vector<Tensor> x_cls;  // one [d_model] vector per candidate
    AttentionMap alpha_q;
    Tensor v_q;  // [d_model]
    Tensor y_q;  // [4], distribution over candidates
    std::optional<AttentionMap> alpha_r;
    std::optional<Tensor> v_r;
    std::optional<Tensor> y_r;
};

struct DecodeResult {
    AttentionMap alpha;
    Tensor decoded;  // [n_queries x d_model]
};

/// Pooled [CLS] representation of "[CLS] question [SEP] answer [SEP]" after
/// the self-attention encoder stack and a tanh pooler.
Tensor encode_language(const std::vector<int>& question_ids, const std::vector<int>& answer_ids,
                       const ModelParams& params, const ModelConfig& cfg);

/// Runs one cross-attention decoder (branch selects qdec/rdec parameters).
/// Queries are a learned [CLS] vector prepended to the word embeddings of
/// query_token_ids; keys/values are the projected grid features with the
/// geometric embedding added. alpha is the head-averaged final-layer
/// cross-attention row of the [CLS] query, reshaped to the grid.
DecodeResult cross_attention_decode(const std::vector<int>& query_token_ids, const FeatureGrid& grid,
                                    const ModelParams& params, const ModelConfig& cfg,
                                    ParamGroup branch);

/// Attention-weighted sum of the raw grid features followed by one linear
/// layer: v = W (sum_ij alpha[i,j] F[i,j,:]) + b.
Tensor attended_representation(const AttentionMap& alpha, const FeatureGrid& grid,
                               const Tensor& proj_w, const Tensor& proj_b);

/// Hadamard fusion and scalar scoring: head_w^T (x_cls ⊙ v) + head_b.
Tensor fuse_and_score(const Tensor& x_cls, const Tensor& v, const Tensor& head_w,
                      const Tensor& head_b);

/// Full forward pass for one sample. Train mode additionally runs the
/// reasoning branch (requires a rationale); test mode never touches
/// reasoning-decoder parameters. The question branch is computed first with
/// an identical operation order in both modes.
ForwardOutput forward(const Sample& sample, const ModelParams& params, const ModelConfig& cfg,
                      ForwardMode mode);

}  // namespace attnd
