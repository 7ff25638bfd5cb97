#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "jshead/boxes.hpp"
#include "jshead/common.hpp"

namespace jshead {

struct GtInstance {
    Box box;
    int class_index = 0;
};

struct LossConfig {
    float lambda_cls = 0.5f;
    float lambda_iou = 7.5f;
    float lambda_dfl = 1.5f;
    float tal_alpha = 0.5f;
    float tal_beta = 6.0f;
    int tal_topk = 10;

    void validate() const {
        if (lambda_cls < 0 || lambda_iou < 0 || lambda_dfl < 0)
            throw DataError("loss weights must be non-negative");
        if (lambda_cls == 0 && lambda_iou == 0 && lambda_dfl == 0)
            throw DataError("at least one loss weight must be positive");
        if (tal_topk < 1) throw DataError("tal topk must be >= 1");
    }
};

struct AssignmentResult {
    std::vector<int> gt_index;       // per anchor; -1 = background
    std::vector<int> class_index;    // class of the matched gt; -1 = background
    std::vector<float> metric;       // alignment metric t = s^alpha * u^beta
    std::vector<float> soft_target;  // normalized so max per gt equals its max IoU
    std::size_t num_positive = 0;

    bool foreground(std::size_t a) const { return gt_index[a] >= 0; }
};

// Task-aligned assignment. Candidates for a gt are anchors whose center lies
// strictly inside its box; the top-k by t = s^alpha * u^beta become positives
// (ties broken by lower anchor index). An anchor claimed by several gts goes
// to the one with larger t, ties to the lower gt index; losing gts do not
// backfill. scores: anchors x K probabilities, row-major.
AssignmentResult tal_assign(const std::vector<AnchorCenter>& centers,
                            const std::vector<float>& scores, std::size_t num_classes,
                            const std::vector<Box>& pred_boxes,
                            const std::vector<GtInstance>& gts, const LossConfig& cfg);

// Complete-IoU of two boxes (IoU minus center-distance and aspect penalties).
double ciou(const Box& a, const Box& b);

template <typename T>
struct ClsLossResult {
    T loss = T(0);
    std::vector<T> grad;  // d loss / d logit, anchors x K
};

// BCE between sigmoid logits and soft targets (background target 0), summed
// over all entries and normalized by total target mass (clamped to >= 1 so an
// all-background scene yields zero rather than 0/0).
template <typename T>
ClsLossResult<T> cls_loss(const std::vector<T>& logits, std::size_t num_classes,
                          const AssignmentResult& asg) {
    const std::size_t anchors = asg.gt_index.size();
    if (logits.size() != anchors * num_classes)
        throw ShapeError("logit count != anchors * classes");
    T mass = T(0);
    for (std::size_t a = 0; a < anchors; ++a)
        if (asg.foreground(a)) mass += T(asg.soft_target[a]);
    const T denom = mass > T(1) ? mass : T(1);

    ClsLossResult<T> out;
    out.grad.assign(logits.size(), T(0));
    T total = T(0);
    for (std::size_t a = 0; a < anchors; ++a) {
        for (std::size_t k = 0; k < num_classes; ++k) {
            const T x = logits[a * num_classes + k];
            const T t = (asg.foreground(a) && std::size_t(asg.class_index[a]) == k)
                            ? T(asg.soft_target[a])
                            : T(0);
            const T ax = x < T(0) ? -x : x;
            total += (x > T(0) ? x : T(0)) - x * t + std::log1p(std::exp(-ax));
            const T sig = T(1) / (T(1) + std::exp(-x));
            out.grad[a * num_classes + k] = (sig - t) / denom;
        }
    }
    out.loss = total / denom;
    return out;
}

// Soft-target-weighted mean of (1 - CIoU) over positive anchors.
double iou_loss(const std::vector<Box>& pred_boxes, const AssignmentResult& asg,
                const std::vector<GtInstance>& gts);

struct DflLossResult {
    double loss = 0.0;
    std::size_t clamped = 0;  // target distances clamped into [0, kRegMax-1]
};

// Soft-target-weighted mean cross-entropy of the predicted side distributions
// against the two integer bins bracketing each target distance.
// dfl: anchors x (4*kRegMax) logits, sides l,t,r,b.
DflLossResult dfl_loss(const std::vector<float>& dfl, const AssignmentResult& asg,
                       const std::vector<GtInstance>& gts,
                       const std::vector<AnchorCenter>& centers);

double total_loss(double cls, double iou_part, double dfl_part, const LossConfig& cfg);

}  // namespace jshead
