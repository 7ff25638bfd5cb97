#pragma once

#include <vector>

#include "jshead/boxes.hpp"
#include "jshead/head.hpp"
#include "jshead/quant.hpp"
#include "jshead/synth.hpp"

namespace jshead {

struct DetectParams {
    float score_thresh = 0.25f;  // 0.001 for evaluation mode
    float iou_thresh = 0.7f;
    bool per_class = true;
    std::size_t max_det = 300;
};

inline constexpr float kEvalScoreThresh = 0.001f;

// Per-level sigmoid score maps for a scene, conv / online / quantized paths.
std::vector<ScoreMap> score_scene(const VocabularyPack& pack, const SynthScene& scene);
std::vector<ScoreMap> score_scene_online(const EmbeddingMatrix& adapted, const SynthScene& scene,
                                         float scale, float bias);
std::vector<ScoreMap> score_scene_quantized(const QuantizedKernel& q, const SynthScene& scene);

// score -> DFL decode -> NMS over all (cell, class) pairs above threshold.
// sigmoid_scores must align with levels.
std::vector<Detection> decode_detections(const std::vector<ScoreMap>& sigmoid_scores,
                                         const std::vector<SynthLevel>& levels, int image_size,
                                         const DetectParams& params);

std::vector<Detection> run_detection(const VocabularyPack& pack, const SynthScene& scene,
                                     const DetectParams& params);
std::vector<Detection> run_detection_quantized(const QuantizedKernel& q, const SynthScene& scene,
                                               const DetectParams& params);

}  // namespace jshead
