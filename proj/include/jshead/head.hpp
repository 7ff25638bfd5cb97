#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "jshead/common.hpp"
#include "jshead/embedding.hpp"

namespace jshead {

inline constexpr float kDefaultLogitScale = 14.285714f;  // 1/0.07
inline constexpr float kDefaultLogitBias = -10.0f;

// B x C x H x W region features for one pyramid level.
struct FeatureMap {
    int level = 0;
    int stride = 8;  // pixels per cell: 8, 16 or 32
    std::size_t batch = 1;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;  // batch * channels * height * width

    std::size_t cells() const { return height * width; }
    std::size_t size() const { return batch * channels * height * width; }

    std::size_t index(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return ((b * channels + c) * height + y) * width + x;
    }

    void validate() const;
};

enum class Activation { Logit, Sigmoid };

// B x K x H x W per-cell per-class scores.
struct ScoreMap {
    std::size_t batch = 1;
    std::size_t classes = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;
    Activation activation = Activation::Logit;

    std::size_t index(std::size_t b, std::size_t k, std::size_t y, std::size_t x) const {
        return ((b * classes + k) * height + y) * width + x;
    }

    float at(std::size_t b, std::size_t k, std::size_t y, std::size_t x) const {
        return data[index(b, k, y, x)];
    }
};

// Deployable closed-set artifact: labels plus the re-parameterized 1x1
// classifier. Kernel row k stores logit_scale * unit(adapted_k), so scoring a
// pack is a plain convolution over unit-normalized activations plus bias.
struct VocabularyPack {
    std::vector<std::string> labels;
    std::size_t dims = 0;
    std::vector<float> kernel;  // K x D (conceptually K x D x 1 x 1)
    float logit_scale = kDefaultLogitScale;
    float logit_bias = kDefaultLogitBias;
    bool normalized = true;

    std::size_t classes() const { return labels.size(); }
    const float* kernel_row(std::size_t k) const { return kernel.data() + k * dims; }

    void validate() const;
};

// Online path: logit(b,k,y,x) = scale * cos(feature cell, adapted row k) + bias.
// A zero feature vector (or zero embedding row) scores cos = 0.
ScoreMap score_online(const EmbeddingMatrix& adapted, const FeatureMap& features, float scale,
                      float bias);

// Folds the adapted vocabulary into 1x1 convolution kernels.
// Throws DegenerateError naming the label of any zero-norm row.
VocabularyPack reparameterize(const EmbeddingMatrix& adapted, float scale, float bias);

// Offline path: logit(b,k,y,x) = <kernel_k, unit(feature cell)> + bias.
ScoreMap classify_conv(const VocabularyPack& pack, const FeatureMap& features);

void sigmoid_inplace(ScoreMap& s);

}  // namespace jshead
