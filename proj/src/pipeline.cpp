#include "jshead/pipeline.hpp"

namespace jshead {

std::vector<ScoreMap> score_scene(const VocabularyPack& pack, const SynthScene& scene) {
    std::vector<ScoreMap> out;
    out.reserve(scene.levels.size());
    for (const auto& lvl : scene.levels) {
        ScoreMap s = classify_conv(pack, lvl.features);
        sigmoid_inplace(s);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ScoreMap> score_scene_online(const EmbeddingMatrix& adapted, const SynthScene& scene,
                                         float scale, float bias) {
    std::vector<ScoreMap> out;
    out.reserve(scene.levels.size());
    for (const auto& lvl : scene.levels) {
        ScoreMap s = score_online(adapted, lvl.features, scale, bias);
        sigmoid_inplace(s);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ScoreMap> score_scene_quantized(const QuantizedKernel& q, const SynthScene& scene) {
    std::vector<ScoreMap> out;
    out.reserve(scene.levels.size());
    for (const auto& lvl : scene.levels) {
        ScoreMap s = classify_quantized(q, lvl.features);
        sigmoid_inplace(s);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Detection> decode_detections(const std::vector<ScoreMap>& sigmoid_scores,
                                         const std::vector<SynthLevel>& levels, int image_size,
                                         const DetectParams& params) {
    if (sigmoid_scores.size() != levels.size())
        throw ShapeError("score map count != level count");
    std::vector<Detection> candidates;
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const auto& lvl = levels[li];
        const auto& s = sigmoid_scores[li];
        if (s.height != lvl.features.height || s.width != lvl.features.width)
            throw ShapeError("score map shape != feature map shape");
        const float stride = float(lvl.features.stride);
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) {
                // decode the cell box once, on demand
                bool decoded = false;
                Box box;
                for (std::size_t k = 0; k < s.classes; ++k) {
                    const float score = s.at(0, k, y, x);
                    if (score < params.score_thresh) continue;
                    if (!decoded) {
                        const std::size_t cell = y * s.width + x;
                        const auto ltrb = dfl_decode(lvl.dfl.data() + cell * 4 * kRegMax);
                        const AnchorCenter c{(float(x) + 0.5f) * stride,
                                             (float(y) + 0.5f) * stride, lvl.features.stride};
                        box = decode_box(c, ltrb, image_size);
                        decoded = true;
                    }
                    candidates.push_back({box, score, int(k)});
                }
            }
    }
    return nms(candidates, params.iou_thresh, params.score_thresh, params.per_class,
               params.max_det);
}

std::vector<Detection> run_detection(const VocabularyPack& pack, const SynthScene& scene,
                                     const DetectParams& params) {
    return decode_detections(score_scene(pack, scene), scene.levels, scene.image_size, params);
}

std::vector<Detection> run_detection_quantized(const QuantizedKernel& q, const SynthScene& scene,
                                               const DetectParams& params) {
    return decode_detections(score_scene_quantized(q, scene), scene.levels, scene.image_size,
                             params);
}

}  // namespace jshead
