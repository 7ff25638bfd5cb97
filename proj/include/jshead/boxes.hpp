#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "jshead/common.hpp"

namespace jshead {

inline constexpr int kRegMax = 16;  // DFL bins per box side

struct Box {
    float x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    float width() const { return x2 - x1; }
    float height() const { return y2 - y1; }
    float area() const { return (x2 > x1 && y2 > y1) ? (x2 - x1) * (y2 - y1) : 0.0f; }
};

double iou(const Box& a, const Box& b);

struct LevelSpec {
    int stride = 8;
    std::size_t height = 0;
    std::size_t width = 0;
};

struct GridSpec {
    std::vector<LevelSpec> levels;
    int image_size = 640;

    std::size_t anchor_count() const;
    void validate() const;
};

struct AnchorCenter {
    float x = 0, y = 0;
    int stride = 8;
};

// One center per cell at ((j+0.5)*stride, (i+0.5)*stride), level-major order.
std::vector<AnchorCenter> make_anchor_centers(const GridSpec& grid);

// Expected distance of a softmax distribution over kRegMax bins, one value per
// side. logits: 4 * kRegMax, sides ordered l, t, r, b. Result in [0, kRegMax-1].
std::array<float, 4> dfl_decode(const float* logits);

Box decode_box(const AnchorCenter& c, const std::array<float, 4>& ltrb, int image_size);

struct Detection {
    Box box;
    float score = 0;
    int class_index = 0;
};

// Greedy descending-score suppression. Candidates below score_thresh are
// dropped first; a kept box suppresses later same-class (or any-class, when
// per_class is false) boxes with IoU strictly above iou_thresh. Output sorted
// by (score desc, class asc, original position asc) and capped at max_det.
std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_thresh,
                           float score_thresh, bool per_class, std::size_t max_det);

// Detection document: one JSON array of {box, score, label, class_index}.
std::string detections_to_json(const std::vector<Detection>& dets,
                               const std::vector<std::string>& labels);

}  // namespace jshead
