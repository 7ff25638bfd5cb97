#include "jshead/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace jshead {

double iou(const Box& a, const Box& b) {
    const double ix1 = std::max(a.x1, b.x1);
    const double iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2);
    const double iy2 = std::min(a.y2, b.y2);
    const double iw = std::max(0.0, ix2 - ix1);
    const double ih = std::max(0.0, iy2 - iy1);
    const double inter = iw * ih;
    const double area_a =
        std::max(0.0, double(a.x2) - double(a.x1)) * std::max(0.0, double(a.y2) - double(a.y1));
    const double area_b =
        std::max(0.0, double(b.x2) - double(b.x1)) * std::max(0.0, double(b.y2) - double(b.y1));
    const double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::size_t GridSpec::anchor_count() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.height * l.width;
    return n;
}

void GridSpec::validate() const {
    if (image_size <= 0) throw DataError("image size must be positive");
    int prev = 0;
    for (const auto& l : levels) {
        if (l.stride != 8 && l.stride != 16 && l.stride != 32)
            throw DataError("stride must be 8, 16 or 32");
        if (l.stride <= prev) throw DataError("strides must be strictly increasing");
        prev = l.stride;
        const std::size_t max_cells =
            (std::size_t(image_size) + l.stride - 1) / std::size_t(l.stride);
        if (l.height > max_cells || l.width > max_cells)
            throw DataError("level " + std::to_string(l.stride) +
                            " grid exceeds image size");
        if (l.height == 0 || l.width == 0) throw EmptyError("empty grid level");
    }
}

std::vector<AnchorCenter> make_anchor_centers(const GridSpec& grid) {
    grid.validate();
    std::vector<AnchorCenter> centers;
    centers.reserve(grid.anchor_count());
    for (const auto& l : grid.levels)
        for (std::size_t i = 0; i < l.height; ++i)
            for (std::size_t j = 0; j < l.width; ++j)
                centers.push_back({(float(j) + 0.5f) * float(l.stride),
                                   (float(i) + 0.5f) * float(l.stride), l.stride});
    return centers;
}

std::array<float, 4> dfl_decode(const float* logits) {
    std::array<float, 4> out{};
    for (int side = 0; side < 4; ++side) {
        const float* lg = logits + side * kRegMax;
        double mx = lg[0];
        for (int b = 1; b < kRegMax; ++b) mx = std::max(mx, double(lg[b]));
        if (!std::isfinite(mx)) throw DataError("non-finite DFL logit");
        double z = 0.0, expect = 0.0;
        for (int b = 0; b < kRegMax; ++b) {
            if (!std::isfinite(lg[b])) throw DataError("non-finite DFL logit");
            const double p = std::exp(double(lg[b]) - mx);
            z += p;
            expect += double(b) * p;
        }
        out[side] = static_cast<float>(expect / z);
    }
    return out;
}

Box decode_box(const AnchorCenter& c, const std::array<float, 4>& ltrb, int image_size) {
    const float s = float(c.stride);
    Box b;
    b.x1 = std::clamp(c.x - ltrb[0] * s, 0.0f, float(image_size));
    b.y1 = std::clamp(c.y - ltrb[1] * s, 0.0f, float(image_size));
    b.x2 = std::clamp(c.x + ltrb[2] * s, 0.0f, float(image_size));
    b.y2 = std::clamp(c.y + ltrb[3] * s, 0.0f, float(image_size));
    return b;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_thresh,
                           float score_thresh, bool per_class, std::size_t max_det) {
    std::vector<std::size_t> order;
    order.reserve(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i)
        if (dets[i].score >= score_thresh) order.push_back(i);

    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        if (dets[a].class_index != dets[b].class_index)
            return dets[a].class_index < dets[b].class_index;
        return a < b;
    });

    std::vector<Detection> kept;
    for (std::size_t idx : order) {
        const Detection& cand = dets[idx];
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (per_class && k.class_index != cand.class_index) continue;
            if (iou(k.box, cand.box) > iou_thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            kept.push_back(cand);
            if (kept.size() >= max_det) break;
        }
    }
    return kept;
}

std::string detections_to_json(const std::vector<Detection>& dets,
                               const std::vector<std::string>& labels) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : dets) {
        nlohmann::json j;
        j["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
        j["score"] = d.score;
        j["label"] = (d.class_index >= 0 && std::size_t(d.class_index) < labels.size())
                         ? labels[std::size_t(d.class_index)]
                         : std::to_string(d.class_index);
        j["class_index"] = d.class_index;
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

}  // namespace jshead
