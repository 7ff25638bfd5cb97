#include "jshead/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace jshead {

std::vector<float> flatten_scene_features(const SynthScene& scene) {
    std::vector<float> out;
    for (const auto& lvl : scene.levels) {
        const std::size_t plane = lvl.features.cells();
        const std::size_t dim = lvl.features.channels;
        const std::size_t base = out.size();
        out.resize(base + plane * dim);
        for (std::size_t cell = 0; cell < plane; ++cell)
            for (std::size_t c = 0; c < dim; ++c)
                out[base + cell * dim + c] = lvl.features.data[c * plane + cell];
    }
    return out;
}

std::vector<float> flatten_scene_dfl(const SynthScene& scene) {
    std::vector<float> out;
    for (const auto& lvl : scene.levels) out.insert(out.end(), lvl.dfl.begin(), lvl.dfl.end());
    return out;
}

std::vector<std::int32_t> flatten_scene_oracle(const SynthScene& scene) {
    std::vector<std::int32_t> out;
    for (const auto& lvl : scene.levels)
        out.insert(out.end(), lvl.oracle.begin(), lvl.oracle.end());
    return out;
}

GridSpec scene_grid(const SynthScene& scene) {
    GridSpec g;
    g.image_size = scene.image_size;
    for (const auto& lvl : scene.levels)
        g.levels.push_back({lvl.features.stride, lvl.features.height, lvl.features.width});
    return g;
}

std::vector<Box> anchor_cell_boxes(const std::vector<AnchorCenter>& centers, int image_size) {
    std::vector<Box> boxes;
    boxes.reserve(centers.size());
    for (const auto& c : centers) {
        const float h = 0.5f * float(c.stride);
        Box b;
        b.x1 = std::clamp(c.x - h, 0.0f, float(image_size));
        b.y1 = std::clamp(c.y - h, 0.0f, float(image_size));
        b.x2 = std::clamp(c.x + h, 0.0f, float(image_size));
        b.y2 = std::clamp(c.y + h, 0.0f, float(image_size));
        boxes.push_back(b);
    }
    return boxes;
}

namespace {

double oracle_accuracy(const std::vector<float>& logits, std::size_t classes,
                       const std::vector<std::int32_t>& oracle) {
    std::size_t total = 0, correct = 0;
    for (std::size_t a = 0; a < oracle.size(); ++a) {
        if (oracle[a] < 0) continue;
        const float* row = logits.data() + a * classes;
        std::size_t best = 0;
        for (std::size_t k = 1; k < classes; ++k)
            if (row[k] > row[best]) best = k;
        ++total;
        if (std::int32_t(best) == oracle[a]) ++correct;
    }
    return total == 0 ? 1.0 : double(correct) / double(total);
}

struct SceneCache {
    std::vector<float> feats;
    std::vector<float> dfl;
    std::vector<std::int32_t> oracle;
    std::vector<AnchorCenter> centers;
    std::vector<Box> cell_boxes;
};

SceneCache cache_scene(const SynthScene& scene) {
    SceneCache c;
    c.feats = flatten_scene_features(scene);
    c.dfl = flatten_scene_dfl(scene);
    c.oracle = flatten_scene_oracle(scene);
    c.centers = make_anchor_centers(scene_grid(scene));
    c.cell_boxes = anchor_cell_boxes(c.centers, scene.image_size);
    return c;
}

}  // namespace

double corpus_cell_accuracy(const AdaptorParams& params, const EmbeddingMatrix& raw_embeddings,
                            const std::vector<SynthScene>& scenes, float alpha, float beta) {
    const EmbeddingMatrix adapted = forward(params, raw_embeddings);
    std::size_t total = 0, correct = 0;
    for (const auto& scene : scenes) {
        const auto feats = flatten_scene_features(scene);
        const auto oracle = flatten_scene_oracle(scene);
        const auto s = cosine_logits(feats, adapted.data, adapted.dims, alpha, beta);
        for (std::size_t a = 0; a < oracle.size(); ++a) {
            if (oracle[a] < 0) continue;
            const float* row = s.logits.data() + a * s.classes;
            std::size_t best = 0;
            for (std::size_t k = 1; k < s.classes; ++k)
                if (row[k] > row[best]) best = k;
            ++total;
            if (std::int32_t(best) == oracle[a]) ++correct;
        }
    }
    return total == 0 ? 1.0 : double(correct) / double(total);
}

TrainResult train_adaptor(const AdaptorParams& init, const EmbeddingMatrix& raw_embeddings,
                          const std::vector<SynthScene>& scenes, const TrainConfig& cfg) {
    raw_embeddings.validate();
    cfg.loss.validate();
    if (scenes.empty()) throw DataError("training needs at least one scene");
    for (const auto& s : scenes)
        for (const auto& lvl : s.levels)
            if (lvl.features.channels != raw_embeddings.dims)
                throw ShapeError("scene feature width != embedding dim");

    TrainResult res;
    res.params = init;
    res.alpha = cfg.alpha0;
    res.beta = cfg.beta0;
    res.history.reserve(cfg.steps);

    std::vector<SceneCache> cache;
    cache.reserve(scenes.size());
    for (const auto& s : scenes) cache.push_back(cache_scene(s));

    const std::size_t K = raw_embeddings.rows;
    const float inv_scenes = 1.0f / float(scenes.size());
    std::ptrdiff_t last_finite = -1;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        // full-batch step: one shared forward, gradients averaged over scenes
        const std::vector<float> adapted =
            adaptor_forward(res.params, raw_embeddings.data.data(), K);

        std::vector<float> d_emb(adapted.size(), 0.0f);
        float d_alpha = 0.0f, d_beta = 0.0f;
        TrainRecord rec;
        rec.step = step;
        std::size_t cells_total = 0, cells_correct = 0;

        for (std::size_t si = 0; si < scenes.size(); ++si) {
            const SceneCache& sc = cache[si];
            const auto& gts = scenes[si].gts;
            const auto scoring =
                cosine_logits(sc.feats, adapted, raw_embeddings.dims, res.alpha, res.beta);

            std::vector<float> probs(scoring.logits.size());
            for (std::size_t i = 0; i < probs.size(); ++i)
                probs[i] = 1.0f / (1.0f + std::exp(-scoring.logits[i]));
            const AssignmentResult asg =
                tal_assign(sc.centers, probs, K, sc.cell_boxes, gts, cfg.loss);

            const auto cls = cls_loss(scoring.logits, K, asg);
            const double iou_l = iou_loss(sc.cell_boxes, asg, gts);
            const auto dfl_l = dfl_loss(sc.dfl, asg, gts, sc.centers);
            if (!std::isfinite(double(cls.loss)) || !std::isfinite(iou_l) ||
                !std::isfinite(dfl_l.loss))
                throw TrainingError(
                    "loss diverged at step " + std::to_string(step) + "; last finite step " +
                    (last_finite < 0 ? std::string("none") : std::to_string(last_finite)));
            rec.loss_cls += double(cls.loss) * inv_scenes;
            rec.loss_iou += iou_l * inv_scenes;
            rec.loss_dfl += dfl_l.loss * inv_scenes;
            for (std::size_t a = 0; a < sc.oracle.size(); ++a) {
                if (sc.oracle[a] < 0) continue;
                const float* row = scoring.logits.data() + a * K;
                std::size_t best = 0;
                for (std::size_t k = 1; k < K; ++k)
                    if (row[k] > row[best]) best = k;
                ++cells_total;
                if (std::int32_t(best) == sc.oracle[a]) ++cells_correct;
            }

            if (cfg.lr != 0.0f) {
                // only the classification term reaches the adaptor; the box
                // terms have no text-embedding dependence
                std::vector<float> g(cls.grad.size());
                const float w = cfg.loss.lambda_cls * inv_scenes;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = w * cls.grad[i];
                const auto cb =
                    cosine_logits_backward(scoring, sc.feats, adapted, g, res.alpha);
                for (std::size_t i = 0; i < d_emb.size(); ++i) d_emb[i] += cb.d_emb[i];
                d_alpha += cb.d_alpha;
                d_beta += cb.d_beta;
            }
        }

        rec.loss_total = total_loss(rec.loss_cls, rec.loss_iou, rec.loss_dfl, cfg.loss);
        rec.acc = cells_total == 0 ? 1.0 : double(cells_correct) / double(cells_total);
        res.history.push_back(rec);
        last_finite = std::ptrdiff_t(step);

        if (cfg.lr != 0.0f) {
            const auto ag =
                adaptor_backward(res.params, raw_embeddings.data.data(), K, d_emb.data());
            for (std::size_t li = 0; li < res.params.num_layers(); ++li) {
                auto& layer = res.params.layers[li];
                const auto& gl = ag.layers[li];
                for (std::size_t i = 0; i < layer.weight.size(); ++i)
                    layer.weight[i] -= cfg.lr * gl.weight[i];
                for (std::size_t i = 0; i < layer.bias.size(); ++i)
                    layer.bias[i] -= cfg.lr * gl.bias[i];
            }
            res.alpha -= cfg.lr * d_alpha;
            res.beta -= cfg.lr * d_beta;
        }
    }

    res.final_accuracy =
        corpus_cell_accuracy(res.params, raw_embeddings, scenes, res.alpha, res.beta);
    return res;
}

std::string train_log_csv(const std::vector<TrainRecord>& history) {
    std::string out = "step,loss_cls,loss_iou,loss_dfl,loss_total,acc\n";
    char buf[256];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.loss_cls,
                      r.loss_iou, r.loss_dfl, r.loss_total, r.acc);
        out += buf;
    }
    return out;
}

void write_train_log(const std::vector<TrainRecord>& history, const std::string& path) {
    write_file_bytes(path, train_log_csv(history));
}

}  // namespace jshead
