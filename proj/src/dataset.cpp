#include "attnd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "attnd/errors.hpp"
#include "attnd/serialize.hpp"

namespace fs = std::filesystem;

namespace attnd {

namespace {

constexpr uint32_t kDatasetFormatVersion = 1;

std::string digit_word(size_t n) { return std::to_string(n); }

}  // namespace

void DatasetConfig::validate() const {
    if (grid_h == 0 || grid_w == 0 || grid_h > kMaxGridSide || grid_w > kMaxGridSide) {
        throw InputError("grid dimensions must be in 1.." + std::to_string(kMaxGridSide));
    }
    if (d_visual == 0) throw InputError("d_visual must be positive");
    if (noise_sigma < 0.0) throw InputError("noise_sigma must be nonnegative");
    if (min_objects < 2 || max_objects > 5 || min_objects > max_objects) {
        throw InputError("object count range must lie within 2..5");
    }
    if (max_objects > grid_h * grid_w) throw InputError("grid too small for requested object count");
}

nlohmann::json DatasetConfig::to_json() const {
    return {{"grid_h", grid_h},     {"grid_w", grid_w},           {"d_visual", d_visual},
            {"noise_sigma", noise_sigma}, {"min_objects", min_objects}, {"max_objects", max_objects}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.grid_h = j.at("grid_h").get<size_t>();
    c.grid_w = j.at("grid_w").get<size_t>();
    c.d_visual = j.at("d_visual").get<size_t>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.min_objects = j.at("min_objects").get<size_t>();
    c.max_objects = j.at("max_objects").get<size_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Vocabulary

void Vocabulary::add(const std::string& token) {
    if (token_to_id_.count(token)) throw StateError("duplicate vocabulary token " + token);
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build_default() {
    Vocabulary v;
    v.add("[PAD]");
    v.add("[CLS]");
    v.add("[SEP]");
    for (const char* s : kShapeNames) v.add(s);
    for (const char* c : kColorNames) v.add(c);
    for (size_t d = 0; d < kMaxGridSide; ++d) v.add(digit_word(d));
    for (const char* w : {"what", "is", "the", "object", "which", "row", "col", "in", "at"}) v.add(w);
    // "color" and "shape" double as question words and attribute names
    v.add("color");
    v.add("shape");
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) throw InputError("token '" + token + "' not in vocabulary");
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size()) {
        throw InputError("token id " + std::to_string(id) + " out of vocabulary range");
    }
    return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& words) const {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (size_t i = 0; i < id_to_token_.size(); ++i) j[id_to_token_[i]] = i;
    return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.empty()) throw FormatError("vocabulary JSON must be a non-empty object");
    std::vector<std::string> by_id(j.size());
    for (const auto& [token, id_json] : j.items()) {
        const int id = id_json.get<int>();
        if (id < 0 || static_cast<size_t>(id) >= by_id.size() || !by_id[static_cast<size_t>(id)].empty()) {
            throw FormatError("vocabulary is not a bijection onto 0.." + std::to_string(by_id.size() - 1));
        }
        by_id[static_cast<size_t>(id)] = token;
    }
    if (by_id.size() < 3 || by_id[0] != "[PAD]" || by_id[1] != "[CLS]" || by_id[2] != "[SEP]") {
        throw FormatError("vocabulary special tokens must occupy ids 0..2");
    }
    Vocabulary v;
    for (const auto& tok : by_id) v.add(tok);
    return v;
}

// ---------------------------------------------------------------------------
// Rendering

FeatureCodes make_feature_codes(size_t d_visual, Rng& rng) {
    auto unit_rows = [&](size_t rows) {
        Tensor t({rows, d_visual});
        for (size_t r = 0; r < rows; ++r) {
            double norm_sq = 0.0;
            for (size_t j = 0; j < d_visual; ++j) {
                const double v = rng.normal();
                t.mut(r, j) = v;
                norm_sq += v * v;
            }
            const double inv = 1.0 / std::sqrt(norm_sq);
            for (size_t j = 0; j < d_visual; ++j) t.mut(r, j) *= inv;
        }
        return t;
    };
    FeatureCodes codes;
    codes.shape_codes = unit_rows(kShapeNames.size());
    codes.color_codes = unit_rows(kColorNames.size());
    return codes;
}

FeatureGrid render_features(const SceneSpec& scene, const FeatureCodes& codes, uint64_t seed) {
    const size_t d = codes.depth();
    Rng rng(seed);
    Tensor features({scene.h, scene.w, d});
    // One noise draw per channel of every cell, object or not, so the noise
    // stream does not depend on object placement.
    for (size_t i = 0; i < features.size(); ++i) {
        features.data()[i] = scene.noise_sigma * rng.normal();
    }
    for (const SceneObject& o : scene.objects) {
        if (o.row >= scene.h || o.col >= scene.w) throw InputError("scene object outside the grid");
        double* cell = features.data().data() + (o.row * scene.w + o.col) * d;
        const double* sc = codes.shape_codes.data().data() + static_cast<size_t>(o.shape) * d;
        const double* cc = codes.color_codes.data().data() + static_cast<size_t>(o.color) * d;
        for (size_t j = 0; j < d; ++j) cell[j] += sc[j] + cc[j];
    }
    return FeatureGrid(scene.h, scene.w, std::move(features));
}

// ---------------------------------------------------------------------------
// Sample generation

namespace {

std::vector<size_t> unique_attr_objects(const SceneSpec& scene, int template_id) {
    auto count_matching = [&](auto pred) {
        std::vector<size_t> counts(scene.objects.size(), 0);
        for (size_t i = 0; i < scene.objects.size(); ++i) {
            for (const auto& other : scene.objects) {
                if (pred(scene.objects[i], other)) ++counts[i];
            }
        }
        return counts;
    };
    std::vector<size_t> counts;
    switch (template_id) {
        case 0:
            counts = count_matching([](const SceneObject& a, const SceneObject& b) { return a.shape == b.shape; });
            break;
        case 1:
            counts = count_matching([](const SceneObject& a, const SceneObject& b) { return a.color == b.color; });
            break;
        case 2:
            counts = count_matching([](const SceneObject& a, const SceneObject& b) {
                return a.shape == b.shape && a.color == b.color;
            });
            break;
        default:
            throw InputError("unknown template id " + std::to_string(template_id));
    }
    std::vector<size_t> eligible;
    for (size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 1) eligible.push_back(i);
    }
    return eligible;
}

}  // namespace

bool template_eligible(const SceneSpec& scene, int template_id) {
    if (template_id == 2 && scene.h < 4) return false;  // needs 3 distinct row distractors
    return !unique_attr_objects(scene, template_id).empty();
}

Sample generate_sample(const SceneSpec& scene, int template_id, Rng& rng, const Vocabulary& vocab,
                       const FeatureCodes& codes, uint64_t render_seed, size_t id) {
    if (template_id == 2 && scene.h < 4) {
        throw InputError("template 2 needs a grid with at least 4 rows");
    }
    const std::vector<size_t> eligible = unique_attr_objects(scene, template_id);
    if (eligible.empty()) {
        throw InputError("scene has no object satisfying template " + std::to_string(template_id) +
                         " uniquely");
    }
    const SceneObject target = scene.objects[eligible[rng.uniform_int(eligible.size())]];
    const std::string shape_word = kShapeNames[static_cast<size_t>(target.shape)];
    const std::string color_word = kColorNames[static_cast<size_t>(target.color)];

    std::vector<std::string> question;
    std::string correct;
    std::vector<std::string> distractors;
    switch (template_id) {
        case 0: {
            question = {"what", "color", "is", "the", shape_word};
            correct = color_word;
            for (const char* c : kColorNames) {
                if (c != color_word) distractors.emplace_back(c);
            }
            break;
        }
        case 1: {
            question = {"what", "shape", "is", "the", color_word, "object"};
            correct = shape_word;
            for (const char* s : kShapeNames) {
                if (s != shape_word) distractors.emplace_back(s);
            }
            break;
        }
        case 2: {
            question = {"which", "row", "is", "the", color_word, shape_word, "in"};
            correct = digit_word(target.row);
            std::vector<size_t> rows;
            for (size_t r = 0; r < scene.h; ++r) {
                if (r != target.row) rows.push_back(r);
            }
            rng.shuffle(rows);
            for (size_t k = 0; k < 3; ++k) distractors.push_back(digit_word(rows[k]));
            break;
        }
        default:
            throw InputError("unknown template id " + std::to_string(template_id));
    }

    Sample s;
    s.id = id;
    s.scene = scene;
    s.grid = render_features(scene, codes, render_seed);
    s.question_ids = vocab.encode(question);
    s.rationale_ids = vocab.encode({"the", color_word, shape_word, "is", "at", "row",
                                    digit_word(target.row), "col", digit_word(target.col)});
    s.target_cells = {{target.row, target.col}};

    rng.shuffle(distractors);
    s.correct_index = static_cast<int>(rng.uniform_int(4));
    size_t next = 0;
    for (int k = 0; k < 4; ++k) {
        const std::string& word = (k == s.correct_index) ? correct : distractors[next++];
        s.candidate_ids[static_cast<size_t>(k)] = {vocab.id(word)};
    }
    return s;
}

// ---------------------------------------------------------------------------
// Dataset generation

namespace {

SceneSpec random_scene(const DatasetConfig& cfg, Rng& rng) {
    SceneSpec scene;
    scene.h = cfg.grid_h;
    scene.w = cfg.grid_w;
    scene.noise_sigma = cfg.noise_sigma;
    const size_t n =
        cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);
    std::set<std::pair<size_t, size_t>> used;
    while (scene.objects.size() < n) {
        const size_t r = rng.uniform_int(scene.h);
        const size_t c = rng.uniform_int(scene.w);
        if (!used.insert({r, c}).second) continue;
        SceneObject o;
        o.row = r;
        o.col = c;
        o.shape = static_cast<int>(rng.uniform_int(kShapeNames.size()));
        o.color = static_cast<int>(rng.uniform_int(kColorNames.size()));
        scene.objects.push_back(o);
    }
    return scene;
}

Sample make_sample(size_t id, uint64_t seed, const DatasetConfig& cfg, const Vocabulary& vocab,
                   const FeatureCodes& codes) {
    Rng rng = Rng::derive(seed, 2 * id);
    const int n_templates = cfg.grid_h >= 4 ? kNumTemplates : 2;
    const int template_id = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n_templates)));
    const uint64_t render_seed = 0x5EEDF00DULL ^ (seed * 0x9e3779b97f4a7c15ULL + id);
    for (;;) {
        const SceneSpec scene = random_scene(cfg, rng);
        if (!template_eligible(scene, template_id)) continue;  // retry with a new scene
        return generate_sample(scene, template_id, rng, vocab, codes, render_seed, id);
    }
}

}  // namespace

Dataset generate_dataset(size_t n_train, size_t n_val, const DatasetConfig& config, uint64_t seed) {
    if (n_train == 0 || n_val == 0) throw InputError("split sizes must be at least 1");
    config.validate();
    Dataset ds;
    ds.seed = seed;
    ds.config = config;
    ds.vocab = Vocabulary::build_default();
    Rng codes_rng = Rng::derive(seed, 0xC0DE5u);
    ds.codes = make_feature_codes(config.d_visual, codes_rng);
    ds.train.reserve(n_train);
    ds.val.reserve(n_val);
    for (size_t id = 0; id < n_train + n_val; ++id) {
        Sample s = make_sample(id, seed, config, ds.vocab, ds.codes);
        (id < n_train ? ds.train : ds.val).push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Dataset I/O

namespace {

nlohmann::json sample_to_json(const Sample& s) {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : s.scene.objects) {
        objects.push_back({o.row, o.col, o.shape, o.color});
    }
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& [r, c] : s.target_cells) cells.push_back({r, c});
    return {{"id", s.id},
            {"scene",
             {{"h", s.scene.h}, {"w", s.scene.w}, {"noise_sigma", s.scene.noise_sigma}, {"objects", objects}}},
            {"question_ids", s.question_ids},
            {"candidate_ids", s.candidate_ids},
            {"correct_index", s.correct_index},
            {"rationale_ids", s.rationale_ids},
            {"target_cells", cells}};
}

Sample sample_from_json(const nlohmann::json& j) {
    Sample s;
    s.id = j.at("id").get<size_t>();
    const auto& scene = j.at("scene");
    s.scene.h = scene.at("h").get<size_t>();
    s.scene.w = scene.at("w").get<size_t>();
    s.scene.noise_sigma = scene.at("noise_sigma").get<double>();
    for (const auto& o : scene.at("objects")) {
        SceneObject obj;
        obj.row = o.at(0).get<size_t>();
        obj.col = o.at(1).get<size_t>();
        obj.shape = o.at(2).get<int>();
        obj.color = o.at(3).get<int>();
        s.scene.objects.push_back(obj);
    }
    s.question_ids = j.at("question_ids").get<std::vector<int>>();
    const auto& cands = j.at("candidate_ids");
    if (!cands.is_array() || cands.size() != 4) throw FormatError("candidate_ids must have 4 entries");
    for (size_t k = 0; k < 4; ++k) s.candidate_ids[k] = cands[k].get<std::vector<int>>();
    s.correct_index = j.at("correct_index").get<int>();
    if (s.correct_index < 0 || s.correct_index >= 4) throw FormatError("correct_index out of range");
    s.rationale_ids = j.at("rationale_ids").get<std::vector<int>>();
    for (const auto& c : j.at("target_cells")) {
        s.target_cells.emplace_back(c.at(0).get<size_t>(), c.at(1).get<size_t>());
    }
    if (s.target_cells.empty()) throw FormatError("target_cells must be nonempty");
    return s;
}

std::string split_to_jsonl(const std::vector<Sample>& samples) {
    std::string out;
    for (const Sample& s : samples) {
        out += sample_to_json(s).dump();
        out += '\n';
    }
    return out;
}

void append_grid_bytes(std::vector<uint8_t>& out, const FeatureGrid& grid) {
    for (double v : grid.features.data()) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<uint8_t>(bits >> (8 * b)));
    }
}

constexpr const char* kDatasetFiles[] = {"vocab.json", "codes.bin", "train.jsonl", "val.jsonl",
                                         "features.bin"};

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

    write_file_text(dir + "/vocab.json", ds.vocab.to_json().dump() + "\n");

    TensorContainer codes;
    codes.meta = {{"kind", "codes"}, {"d_visual", ds.config.d_visual}, {"seed", ds.seed}};
    codes.tensors.emplace("codes.shape", ds.codes.shape_codes);
    codes.tensors.emplace("codes.color", ds.codes.color_codes);
    save_container(codes, dir + "/codes.bin");

    write_file_text(dir + "/train.jsonl", split_to_jsonl(ds.train));
    write_file_text(dir + "/val.jsonl", split_to_jsonl(ds.val));

    std::vector<uint8_t> features;
    features.reserve((ds.train.size() + ds.val.size()) * ds.config.grid_h * ds.config.grid_w *
                     ds.config.d_visual * 8);
    for (const Sample& s : ds.train) append_grid_bytes(features, s.grid);
    for (const Sample& s : ds.val) append_grid_bytes(features, s.grid);
    write_file_bytes(dir + "/features.bin", features.data(), features.size());

    nlohmann::json files = nlohmann::json::object();
    for (const char* name : kDatasetFiles) {
        files[name] = {{"crc32", crc32_of_file(dir + "/" + name)}};
    }
    const nlohmann::json manifest = {{"format_version", kDatasetFormatVersion},
                                     {"seed", ds.seed},
                                     {"config", ds.config.to_json()},
                                     {"counts", {{"train", ds.train.size()}, {"val", ds.val.size()}}},
                                     {"files", files}};
    write_file_text(dir + "/manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
    const std::string manifest_path = dir + "/manifest.json";
    if (!fs::exists(manifest_path)) throw IoError("missing dataset manifest " + manifest_path);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file_text(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path + ": invalid JSON: " + std::string(e.what()));
    }
    const uint32_t version = manifest.at("format_version").get<uint32_t>();
    if (version != kDatasetFormatVersion) {
        throw FormatError(dir + ": dataset format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kDatasetFormatVersion) + ")");
    }

    for (const char* name : kDatasetFiles) {
        const std::string path = dir + "/" + name;
        if (!fs::exists(path)) throw IoError("dataset is missing component " + path);
        const uint32_t expected = manifest.at("files").at(name).at("crc32").get<uint32_t>();
        const uint32_t actual = crc32_of_file(path);
        if (expected != actual) {
            throw FormatError(path + ": checksum mismatch (manifest says " + std::to_string(expected) +
                              ", file has " + std::to_string(actual) + ")");
        }
    }

    Dataset ds;
    ds.seed = manifest.at("seed").get<uint64_t>();
    ds.config = DatasetConfig::from_json(manifest.at("config"));
    try {
        ds.vocab = Vocabulary::from_json(nlohmann::json::parse(read_file_text(dir + "/vocab.json")));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir + "/vocab.json: invalid JSON: " + std::string(e.what()));
    }

    TensorContainer codes = load_container(dir + "/codes.bin");
    if (!codes.tensors.count("codes.shape") || !codes.tensors.count("codes.color")) {
        throw FormatError(dir + "/codes.bin: missing code tensors");
    }
    ds.codes.shape_codes = codes.tensors.at("codes.shape");
    ds.codes.color_codes = codes.tensors.at("codes.color");

    const size_t n_train = manifest.at("counts").at("train").get<size_t>();
    const size_t n_val = manifest.at("counts").at("val").get<size_t>();

    const auto feature_bytes = read_file_bytes(dir + "/features.bin");
    const size_t grid_elems = ds.config.grid_h * ds.config.grid_w * ds.config.d_visual;
    if (feature_bytes.size() != (n_train + n_val) * grid_elems * 8) {
        throw FormatError(dir + "/features.bin: size does not match manifest counts");
    }
    auto grid_at = [&](size_t index) {
        std::vector<double> data(grid_elems);
        const uint8_t* src = feature_bytes.data() + index * grid_elems * 8;
        for (size_t i = 0; i < grid_elems; ++i) {
            uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(src[i * 8 + b]) << (8 * b);
            std::memcpy(&data[i], &bits, sizeof(double));
        }
        return FeatureGrid(ds.config.grid_h, ds.config.grid_w,
                           Tensor({ds.config.grid_h, ds.config.grid_w, ds.config.d_visual},
                                  std::move(data)));
    };

    auto load_split = [&](const std::string& name, size_t expected) {
        std::vector<Sample> samples;
        samples.reserve(expected);
        std::istringstream lines(read_file_text(dir + "/" + name));
        std::string line;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(dir + "/" + name + ": invalid JSON line: " + std::string(e.what()));
            }
            Sample s = sample_from_json(j);
            s.grid = grid_at(s.id);
            for (const auto& [r, c] : s.target_cells) {
                if (r >= ds.config.grid_h || c >= ds.config.grid_w) {
                    throw FormatError(dir + "/" + name + ": target cell outside grid in sample " +
                                      std::to_string(s.id));
                }
            }
            for (int tok : s.question_ids) ds.vocab.token(tok);  // bounds check
            samples.push_back(std::move(s));
        }
        if (samples.size() != expected) {
            throw FormatError(dir + "/" + name + ": expected " + std::to_string(expected) +
                              " records, found " + std::to_string(samples.size()));
        }
        return samples;
    };
    ds.train = load_split("train.jsonl", n_train);
    ds.val = load_split("val.jsonl", n_val);
    return ds;
}

}  // namespace attnd
