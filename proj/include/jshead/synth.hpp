#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jshead/assign.hpp"
#include "jshead/boxes.hpp"
#include "jshead/embedding.hpp"
#include "jshead/head.hpp"

namespace jshead {

enum class GenMap { Linear, Nonlinear };

struct SynthSpec {
    std::size_t num_classes = 8;
    std::size_t dim = 16;
    GenMap map = GenMap::Linear;
    float sigma = 0.0f;
    GridSpec grid;
    int objects_min = 1;
    int objects_max = 4;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthLevel {
    FeatureMap features;               // 1 x D x H x W
    std::vector<float> dfl;            // per cell (row-major): 4 sides x kRegMax logits
    std::vector<std::int32_t> oracle;  // per cell: class index, -1 = background
};

struct SynthScene {
    std::vector<SynthLevel> levels;
    std::vector<GtInstance> gts;
    int image_size = 0;
    std::uint64_t seed = 0;
};

struct SynthCorpus {
    SynthSpec spec;
    EmbeddingMatrix class_embeddings;  // raw class embeddings (the adaptor input)
    std::vector<SynthScene> scenes;
};

// The fixed map g from class embedding to feature prototype: identity, or a
// seeded orthogonal map (a chain of D Householder reflections, so no subspace
// survives unmixed) followed by relu and re-normalization.
struct FeatureGenerator {
    GenMap map = GenMap::Linear;
    std::size_t dim = 0;
    std::vector<std::vector<float>> reflectors;  // unit vectors, applied in order

    std::vector<float> apply(const float* e) const;
};

FeatureGenerator build_generator(const SynthSpec& spec);

// K unit vectors with pairwise cosine <= 0.5, enforced by rejection sampling
// with a global budget of 1e5 draws (CapacityError once exhausted).
EmbeddingMatrix gen_class_embeddings(const SynthSpec& spec);

SynthScene gen_scene(const SynthSpec& spec, const EmbeddingMatrix& class_embeddings,
                     std::uint64_t scene_seed);

SynthCorpus gen_corpus(const SynthSpec& spec, std::size_t num_scenes);

// Scene corpus directory: manifest.json + classes.dsem (+ labels) + one DSFM
// blob per scene. DSFM layout (little-endian): magic "DSFM", version u32 = 1,
// image_size u32, num_levels u32, reg_max u32; then per level: stride u32,
// B u32 (=1), C u32, H u32, W u32, features B*C*H*W f32, dfl H*W*4*reg_max
// f32, oracle H*W i32.
inline constexpr std::uint32_t kDsfmVersion = 1;

std::string encode_scene(const SynthScene& s);
SynthScene decode_scene(const std::string& bytes);

void save_corpus(const SynthCorpus& corpus, const std::string& dir);
SynthCorpus load_corpus(const std::string& dir);

// Per-class detection quality at IoU 0.5 plus per-cell classification
// accuracy against the oracle maps.
struct EvalClassStats {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 1.0;
    double recall = 1.0;
};

struct EvalMetrics {
    std::vector<EvalClassStats> per_class;
    double precision = 1.0;
    double recall = 1.0;
    double cell_accuracy = -1.0;  // -1 when no score maps were supplied
    std::size_t cells_scored = 0;
};

// Fraction of oracle-foreground cells whose argmax score matches the oracle.
// level_scores must align with scene.levels.
double scene_cell_accuracy(const SynthScene& scene, const std::vector<ScoreMap>& level_scores);

EvalMetrics evaluate(const std::vector<SynthScene>& scenes,
                     const std::vector<std::vector<Detection>>& dets_per_scene,
                     const std::vector<std::vector<ScoreMap>>* scores_per_scene = nullptr,
                     std::size_t num_classes = 0);

std::string metrics_to_json(const EvalMetrics& m, const std::vector<std::string>& labels);

}  // namespace jshead
