#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attnd/grid.hpp"
#include "attnd/rng.hpp"
#include "attnd/tensor.hpp"

namespace attnd {

inline constexpr std::array<const char*, 4> kShapeNames = {"circle", "square", "triangle", "star"};
inline constexpr std::array<const char*, 4> kColorNames = {"red", "green", "blue", "yellow"};
inline constexpr size_t kMaxGridSide = 16;

struct DatasetConfig {
    size_t grid_h = 8;
    size_t grid_w = 8;
    size_t d_visual = 32;
    double noise_sigma = 0.1;
    size_t min_objects = 2;
    size_t max_objects = 5;

    void validate() const;
    nlohmann::json to_json() const;
    static DatasetConfig from_json(const nlohmann::json& j);
};

struct SceneObject {
    size_t row = 0;
    size_t col = 0;
    int shape = 0;  // index into kShapeNames
    int color = 0;  // index into kColorNames
};

struct SceneSpec {
    size_t h = 0;
    size_t w = 0;
    double noise_sigma = 0.0;
    std::vector<SceneObject> objects;  // distinct cells, 2..5 objects
};

/// One VQA instance. The grid is the rendered visual input; candidates are
/// four token sequences of which exactly one is correct; the rationale names
/// the queried object's attributes and its cell.
struct Sample {
    size_t id = 0;
    SceneSpec scene;
    FeatureGrid grid;
    std::vector<int> question_ids;
    std::array<std::vector<int>, 4> candidate_ids;
    int correct_index = 0;
    std::vector<int> rationale_ids;
    std::vector<std::pair<size_t, size_t>> target_cells;
};

/// Token <-> id bijection. Ids 0..2 are [PAD], [CLS], [SEP].
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;

    /// Fixed vocabulary covering the question/rationale templates, shapes,
    /// colors and digits 0..15. Independent of grid size so ids are stable.
    static Vocabulary build_default();

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    size_t size() const { return id_to_token_.size(); }
    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

    std::vector<int> encode(const std::vector<std::string>& words) const;
    std::string decode(const std::vector<int>& ids) const;

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;

    void add(const std::string& token);
};

/// Per-dataset random unit-vector codes that stand in for backbone features.
struct FeatureCodes {
    Tensor shape_codes;  // [4 x d_visual]
    Tensor color_codes;  // [4 x d_visual]

    size_t depth() const { return shape_codes.dim(1); }
};

FeatureCodes make_feature_codes(size_t d_visual, Rng& rng);

/// Object cells get code(shape) + code(color) + N(0, sigma) per channel;
/// empty cells get the noise alone. Deterministic in (scene, codes, seed).
FeatureGrid render_features(const SceneSpec& scene, const FeatureCodes& codes, uint64_t seed);

/// Question templates:
///   0: what color is the <shape>           (needs a scene-unique shape)
///   1: what shape is the <color> object    (needs a scene-unique color)
///   2: which row is the <color> <shape> in (needs a unique pair and h >= 4)
inline constexpr int kNumTemplates = 3;

bool template_eligible(const SceneSpec& scene, int template_id);

/// Builds the sample for one (scene, template) pair. Throws InputError when
/// no object satisfies the template uniquely; callers retry with a new scene.
Sample generate_sample(const SceneSpec& scene, int template_id, Rng& rng, const Vocabulary& vocab,
                       const FeatureCodes& codes, uint64_t render_seed, size_t id);

struct Dataset {
    uint64_t seed = 0;
    DatasetConfig config;
    Vocabulary vocab;
    FeatureCodes codes;
    std::vector<Sample> train;
    std::vector<Sample> val;
};

/// Fully deterministic in (config, seed). Train ids 0..n_train-1, val ids
/// continue after them.
Dataset generate_dataset(size_t n_train, size_t n_val, const DatasetConfig& config, uint64_t seed);

/// Directory layout: vocab.json, codes.bin, train.jsonl, val.jsonl,
/// features.bin (f64 records in id order), manifest.json with CRC32s.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace attnd
