#include "jshead/assign.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jshead {

namespace {

bool center_inside(const AnchorCenter& c, const Box& b) {
    return c.x > b.x1 && c.x < b.x2 && c.y > b.y1 && c.y < b.y2;
}

}  // namespace

AssignmentResult tal_assign(const std::vector<AnchorCenter>& centers,
                            const std::vector<float>& scores, std::size_t num_classes,
                            const std::vector<Box>& pred_boxes,
                            const std::vector<GtInstance>& gts, const LossConfig& cfg) {
    cfg.validate();
    const std::size_t anchors = centers.size();
    if (pred_boxes.size() != anchors) throw ShapeError("pred box count != anchor count");
    if (scores.size() != anchors * num_classes)
        throw ShapeError("score count != anchors * classes");
    for (const auto& g : gts) {
        if (g.box.area() <= 0) throw DataError("gt box must have positive area");
        if (g.class_index < 0 || std::size_t(g.class_index) >= num_classes)
            throw DataError("gt class index out of range");
    }

    AssignmentResult res;
    res.gt_index.assign(anchors, -1);
    res.class_index.assign(anchors, -1);
    res.metric.assign(anchors, 0.0f);
    res.soft_target.assign(anchors, 0.0f);
    if (gts.empty()) return res;  // all background

    // metric and IoU per (gt, anchor) for candidates only
    std::vector<std::vector<std::pair<float, std::size_t>>> selected(gts.size());
    std::vector<std::vector<float>> sel_iou(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
        std::vector<std::size_t> cand;
        for (std::size_t a = 0; a < anchors; ++a)
            if (center_inside(centers[a], gts[g].box)) cand.push_back(a);
        std::vector<std::pair<float, std::size_t>> ranked;  // (t, anchor)
        ranked.reserve(cand.size());
        for (std::size_t a : cand) {
            const float s =
                std::max(0.0f, scores[a * num_classes + std::size_t(gts[g].class_index)]);
            const double u = iou(pred_boxes[a], gts[g].box);
            const float t = static_cast<float>(std::pow(double(s), double(cfg.tal_alpha)) *
                                               std::pow(u, double(cfg.tal_beta)));
            ranked.emplace_back(t, a);
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return x.second < y.second;
        });
        if (ranked.size() > std::size_t(cfg.tal_topk)) ranked.resize(std::size_t(cfg.tal_topk));
        selected[g] = std::move(ranked);
    }

    // conflict resolution: an anchor goes to the gt with larger t (tie: lower index)
    std::vector<int> winner(anchors, -1);
    std::vector<float> winner_t(anchors, 0.0f);
    for (std::size_t g = 0; g < gts.size(); ++g)
        for (const auto& [t, a] : selected[g])
            if (winner[a] < 0 || t > winner_t[a]) {
                winner[a] = int(g);
                winner_t[a] = t;
            }

    // per-gt normalization over surviving positives
    std::vector<float> max_t(gts.size(), 0.0f);
    std::vector<float> max_iou(gts.size(), 0.0f);
    for (std::size_t a = 0; a < anchors; ++a) {
        if (winner[a] < 0) continue;
        const std::size_t g = std::size_t(winner[a]);
        max_t[g] = std::max(max_t[g], winner_t[a]);
        max_iou[g] = std::max(max_iou[g], float(iou(pred_boxes[a], gts[g].box)));
    }
    for (std::size_t a = 0; a < anchors; ++a) {
        if (winner[a] < 0) continue;
        const std::size_t g = std::size_t(winner[a]);
        res.gt_index[a] = winner[a];
        res.class_index[a] = gts[g].class_index;
        res.metric[a] = winner_t[a];
        res.soft_target[a] = winner_t[a] * max_iou[g] / (max_t[g] + 1e-9f);
        ++res.num_positive;
    }
    return res;
}

double ciou(const Box& a, const Box& b) {
    constexpr double eps = 1e-9;
    const double i = iou(a, b);
    const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    const double c2 = cw * cw + ch * ch + eps;
    const double dx = (double(b.x1) + b.x2 - a.x1 - a.x2) / 2.0;
    const double dy = (double(b.y1) + b.y2 - a.y1 - a.y2) / 2.0;
    const double rho2 = dx * dx + dy * dy;
    const double va = std::atan(double(a.width()) / (double(a.height()) + eps));
    const double vb = std::atan(double(b.width()) / (double(b.height()) + eps));
    constexpr double pi = 3.141592653589793238462643383279502884;
    const double v = 4.0 / (pi * pi) * (vb - va) * (vb - va);
    const double alpha = v / (v - i + 1.0 + eps);
    return i - rho2 / c2 - alpha * v;
}

double iou_loss(const std::vector<Box>& pred_boxes, const AssignmentResult& asg,
                const std::vector<GtInstance>& gts) {
    double num = 0.0, den = 0.0;
    for (std::size_t a = 0; a < asg.gt_index.size(); ++a) {
        if (!asg.foreground(a)) continue;
        const double w = asg.soft_target[a];
        num += w * (1.0 - ciou(pred_boxes[a], gts[std::size_t(asg.gt_index[a])].box));
        den += w;
    }
    return den > 0.0 ? num / den : 0.0;
}

DflLossResult dfl_loss(const std::vector<float>& dfl, const AssignmentResult& asg,
                       const std::vector<GtInstance>& gts,
                       const std::vector<AnchorCenter>& centers) {
    const std::size_t anchors = asg.gt_index.size();
    if (centers.size() != anchors) throw ShapeError("center count != anchor count");
    if (dfl.size() != anchors * 4 * kRegMax)
        throw ShapeError("dfl logit count != anchors * 4 * reg_max");

    DflLossResult out;
    double num = 0.0, den = 0.0;
    std::array<double, kRegMax> logp{};
    for (std::size_t a = 0; a < anchors; ++a) {
        if (!asg.foreground(a)) continue;
        const Box& g = gts[std::size_t(asg.gt_index[a])].box;
        const AnchorCenter& c = centers[a];
        const double s = double(c.stride);
        std::array<double, 4> dist = {(c.x - g.x1) / s, (c.y - g.y1) / s, (g.x2 - c.x) / s,
                                      (g.y2 - c.y) / s};
        double ce_sum = 0.0;
        for (int side = 0; side < 4; ++side) {
            double d = dist[std::size_t(side)];
            if (d < 0.0 || d > double(kRegMax - 1)) {
                d = std::clamp(d, 0.0, double(kRegMax - 1));
                ++out.clamped;
            }
            const float* lg = dfl.data() + (a * 4 + std::size_t(side)) * kRegMax;
            double mx = lg[0];
            for (int b = 1; b < kRegMax; ++b) mx = std::max(mx, double(lg[b]));
            double z = 0.0;
            for (int b = 0; b < kRegMax; ++b) z += std::exp(double(lg[b]) - mx);
            const double logz = std::log(z) + mx;
            for (int b = 0; b < kRegMax; ++b) logp[std::size_t(b)] = double(lg[b]) - logz;
            const int lo = int(std::floor(d));
            const double wr = d - double(lo);
            double ce = -(1.0 - wr) * logp[std::size_t(lo)];
            if (wr > 0.0) ce -= wr * logp[std::size_t(lo + 1)];
            ce_sum += ce;
        }
        const double w = asg.soft_target[a];
        num += w * (ce_sum / 4.0);
        den += w;
    }
    out.loss = den > 0.0 ? num / den : 0.0;
    return out;
}

double total_loss(double cls, double iou_part, double dfl_part, const LossConfig& cfg) {
    cfg.validate();
    if (!std::isfinite(cls) || !std::isfinite(iou_part) || !std::isfinite(dfl_part))
        throw DataError("non-finite loss component");
    return double(cfg.lambda_cls) * cls + double(cfg.lambda_iou) * iou_part +
           double(cfg.lambda_dfl) * dfl_part;
}

}  // namespace jshead
