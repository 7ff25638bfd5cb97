#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jshead/adaptor.hpp"
#include "jshead/assign.hpp"
#include "jshead/synth.hpp"

namespace jshead {

// ---------------------------------------------------------------------------
// Cosine scoring over flattened anchors, templated so the double-precision
// gradient checks exercise the same code path the trainer uses.
// ---------------------------------------------------------------------------

template <typename T>
struct CosScores {
    std::size_t anchors = 0, classes = 0, dim = 0;
    std::vector<T> cos;     // anchors x K
    std::vector<T> logits;  // anchors x K: alpha * cos + beta
    std::vector<T> f_norm;  // anchors
    std::vector<T> e_norm;  // K
};

template <typename T>
CosScores<T> cosine_logits(const std::vector<T>& feats, const std::vector<T>& emb,
                           std::size_t dim, T alpha, T beta) {
    CosScores<T> s;
    s.dim = dim;
    s.anchors = feats.size() / dim;
    s.classes = emb.size() / dim;
    s.f_norm.resize(s.anchors);
    s.e_norm.resize(s.classes);
    s.cos.assign(s.anchors * s.classes, T(0));
    s.logits.resize(s.anchors * s.classes);
    for (std::size_t a = 0; a < s.anchors; ++a) {
        T acc = T(0);
        const T* f = feats.data() + a * dim;
        for (std::size_t d = 0; d < dim; ++d) acc += f[d] * f[d];
        s.f_norm[a] = std::sqrt(acc);
    }
    for (std::size_t k = 0; k < s.classes; ++k) {
        T acc = T(0);
        const T* e = emb.data() + k * dim;
        for (std::size_t d = 0; d < dim; ++d) acc += e[d] * e[d];
        s.e_norm[k] = std::sqrt(acc);
    }
    for (std::size_t a = 0; a < s.anchors; ++a) {
        const T* f = feats.data() + a * dim;
        for (std::size_t k = 0; k < s.classes; ++k) {
            T c = T(0);
            if (s.f_norm[a] > T(1e-12) && s.e_norm[k] > T(1e-12)) {
                const T* e = emb.data() + k * dim;
                T dot = T(0);
                for (std::size_t d = 0; d < dim; ++d) dot += f[d] * e[d];
                c = dot / (s.f_norm[a] * s.e_norm[k]);
            }
            s.cos[a * s.classes + k] = c;
            s.logits[a * s.classes + k] = alpha * c + beta;
        }
    }
    return s;
}

template <typename T>
struct CosBackward {
    std::vector<T> d_emb;  // K x dim
    T d_alpha = T(0);
    T d_beta = T(0);
};

// Reverse of cosine_logits with respect to the embeddings, alpha and beta.
// grad_logits: anchors x K. d cos/d e = (f_hat - cos * e_hat) / |e|.
template <typename T>
CosBackward<T> cosine_logits_backward(const CosScores<T>& s, const std::vector<T>& feats,
                                      const std::vector<T>& emb,
                                      const std::vector<T>& grad_logits, T alpha) {
    CosBackward<T> out;
    out.d_emb.assign(emb.size(), T(0));
    for (std::size_t a = 0; a < s.anchors; ++a) {
        const T* f = feats.data() + a * s.dim;
        const T fn = s.f_norm[a];
        for (std::size_t k = 0; k < s.classes; ++k) {
            const T g = grad_logits[a * s.classes + k];
            const T c = s.cos[a * s.classes + k];
            out.d_alpha += g * c;
            out.d_beta += g;
            const T en = s.e_norm[k];
            if (fn <= T(1e-12) || en <= T(1e-12)) continue;
            const T* e = emb.data() + k * s.dim;
            T* de = out.d_emb.data() + k * s.dim;
            const T ga = g * alpha;
            for (std::size_t d = 0; d < s.dim; ++d)
                de[d] += ga * (f[d] / fn - c * e[d] / en) / en;
        }
    }
    return out;
}

// Anchor-major copies of the scene tensors, level-major like the anchor list.
std::vector<float> flatten_scene_features(const SynthScene& scene);
std::vector<float> flatten_scene_dfl(const SynthScene& scene);
std::vector<std::int32_t> flatten_scene_oracle(const SynthScene& scene);
GridSpec scene_grid(const SynthScene& scene);

// The fixed per-anchor "predicted" boxes of the toy trainer: each anchor's own
// cell. Only the classification term trains the adaptor; boxes merely feed the
// IoU part of the assignment metric.
std::vector<Box> anchor_cell_boxes(const std::vector<AnchorCenter>& centers, int image_size);

// ---------------------------------------------------------------------------
// Toy training: plain gradient descent on the classification loss through the
// cosine head; only the adaptor and (alpha, beta) move.
// ---------------------------------------------------------------------------

struct TrainConfig {
    LossConfig loss;
    std::size_t steps = 600;
    float lr = 1e-2f;
    float alpha0 = kDefaultLogitScale;
    float beta0 = kDefaultLogitBias;
};

struct TrainRecord {
    std::size_t step = 0;
    double loss_cls = 0, loss_iou = 0, loss_dfl = 0, loss_total = 0;
    double acc = 0;  // assigned-cell accuracy on this step's scene
};

struct TrainResult {
    AdaptorParams params;
    float alpha = kDefaultLogitScale;
    float beta = kDefaultLogitBias;
    std::vector<TrainRecord> history;
    double final_accuracy = 0;  // corpus-wide assigned-cell accuracy after training
};

TrainResult train_adaptor(const AdaptorParams& init, const EmbeddingMatrix& raw_embeddings,
                          const std::vector<SynthScene>& scenes, const TrainConfig& cfg);

// Corpus-wide assigned-cell accuracy for a given adaptor state.
double corpus_cell_accuracy(const AdaptorParams& params, const EmbeddingMatrix& raw_embeddings,
                            const std::vector<SynthScene>& scenes, float alpha, float beta);

// Append-only CSV: step,loss_cls,loss_iou,loss_dfl,loss_total,acc
std::string train_log_csv(const std::vector<TrainRecord>& history);
void write_train_log(const std::vector<TrainRecord>& history, const std::string& path);

}  // namespace jshead
