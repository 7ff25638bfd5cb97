#include "jshead/head.hpp"

#include <cmath>

namespace jshead {

void FeatureMap::validate() const {
    if (stride != 8 && stride != 16 && stride != 32)
        throw DataError("feature stride must be 8, 16 or 32");
    if (data.size() != size())
        throw LengthError("feature data length " + std::to_string(data.size()) +
                          " != B*C*H*W = " + std::to_string(size()));
    for (float v : data)
        if (!std::isfinite(v)) throw DataError("non-finite feature value");
}

void VocabularyPack::validate() const {
    if (kernel.size() != classes() * dims)
        throw ShapeError("kernel row count != label count");
    for (float v : kernel)
        if (!std::isfinite(v)) throw DataError("non-finite kernel value");
    if (normalized) {
        // rows are logit_scale * unit vector; check the norm relative to scale
        const double scale = std::abs(double(logit_scale));
        for (std::size_t k = 0; k < classes(); ++k) {
            const float* row = kernel_row(k);
            double sq = 0.0;
            for (std::size_t d = 0; d < dims; ++d) sq += double(row[d]) * double(row[d]);
            if (scale > 0 && std::abs(std::sqrt(sq) / scale - 1.0) > 1e-5)
                throw DataError("normalized pack has non-uniform kernel row " +
                                std::to_string(k));
        }
    }
}

namespace {

// Gathers the strided cell vector once per cell; dots accumulate in double so
// the two scoring paths agree to well under the 1e-5 equivalence tolerance.
void gather_cell(const FeatureMap& f, std::size_t b, std::size_t y, std::size_t x,
                 std::vector<float>& out) {
    const std::size_t plane = f.height * f.width;
    const float* base = f.data.data() + (b * f.channels) * plane + y * f.width + x;
    for (std::size_t c = 0; c < f.channels; ++c) out[c] = base[c * plane];
}

double dot_f32(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += double(a[i]) * double(b[i]);
    return acc;
}

double norm_f32(const float* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += double(a[i]) * double(a[i]);
    return std::sqrt(acc);
}

}  // namespace

ScoreMap score_online(const EmbeddingMatrix& adapted, const FeatureMap& features, float scale,
                      float bias) {
    features.validate();
    adapted.validate();
    if (adapted.dims != features.channels)
        throw ShapeError("embedding dim " + std::to_string(adapted.dims) +
                         " != feature channels " + std::to_string(features.channels));
    const std::size_t K = adapted.rows;
    ScoreMap s;
    s.batch = features.batch;
    s.classes = K;
    s.height = features.height;
    s.width = features.width;
    s.data.resize(s.batch * K * s.height * s.width);
    s.activation = Activation::Logit;

    std::vector<double> row_norms(K);
    for (std::size_t k = 0; k < K; ++k)
        row_norms[k] = norm_f32(adapted.row(k), adapted.dims);

    std::vector<float> cell(features.channels);
    for (std::size_t b = 0; b < features.batch; ++b)
        for (std::size_t y = 0; y < features.height; ++y)
            for (std::size_t x = 0; x < features.width; ++x) {
                gather_cell(features, b, y, x, cell);
                const double fn = norm_f32(cell.data(), cell.size());
                for (std::size_t k = 0; k < K; ++k) {
                    double cosv = 0.0;
                    if (fn > 1e-12 && row_norms[k] > 1e-12)
                        cosv = dot_f32(cell.data(), adapted.row(k), adapted.dims) /
                               (fn * row_norms[k]);
                    s.data[s.index(b, k, y, x)] =
                        static_cast<float>(double(scale) * cosv + double(bias));
                }
            }
    return s;
}

VocabularyPack reparameterize(const EmbeddingMatrix& adapted, float scale, float bias) {
    adapted.validate();
    if (adapted.rows == 0) throw EmptyError("cannot re-parameterize an empty vocabulary");
    VocabularyPack pack;
    pack.dims = adapted.dims;
    pack.logit_scale = scale;
    pack.logit_bias = bias;
    pack.normalized = true;
    pack.labels.reserve(adapted.rows);
    for (std::size_t k = 0; k < adapted.rows; ++k)
        pack.labels.push_back(adapted.has_labels() ? adapted.labels[k]
                                                   : "class_" + std::to_string(k));
    pack.kernel.resize(adapted.rows * adapted.dims);
    for (std::size_t k = 0; k < adapted.rows; ++k) {
        const float* src = adapted.row(k);
        const double n = norm_f32(src, adapted.dims);
        if (n <= 1e-12)
            throw DegenerateError("class '" + pack.labels[k] + "' has a zero-norm embedding");
        float* dst = pack.kernel.data() + k * pack.dims;
        for (std::size_t d = 0; d < adapted.dims; ++d)
            dst[d] = static_cast<float>(double(scale) * double(src[d]) / n);
    }
    return pack;
}

ScoreMap classify_conv(const VocabularyPack& pack, const FeatureMap& features) {
    features.validate();
    pack.validate();
    if (pack.dims != features.channels)
        throw ShapeError("pack dim " + std::to_string(pack.dims) + " != feature channels " +
                         std::to_string(features.channels));
    const std::size_t K = pack.classes();
    ScoreMap s;
    s.batch = features.batch;
    s.classes = K;
    s.height = features.height;
    s.width = features.width;
    s.data.resize(s.batch * K * s.height * s.width);
    s.activation = Activation::Logit;

    std::vector<float> cell(features.channels);
    for (std::size_t b = 0; b < features.batch; ++b)
        for (std::size_t y = 0; y < features.height; ++y)
            for (std::size_t x = 0; x < features.width; ++x) {
                gather_cell(features, b, y, x, cell);
                const double fn = norm_f32(cell.data(), cell.size());
                if (fn > 1e-12) {
                    const double inv = 1.0 / fn;
                    for (std::size_t c = 0; c < cell.size(); ++c)
                        cell[c] = static_cast<float>(double(cell[c]) * inv);
                    for (std::size_t k = 0; k < K; ++k)
                        s.data[s.index(b, k, y, x)] = static_cast<float>(
                            dot_f32(pack.kernel_row(k), cell.data(), pack.dims) +
                            double(pack.logit_bias));
                } else {
                    for (std::size_t k = 0; k < K; ++k)
                        s.data[s.index(b, k, y, x)] = pack.logit_bias;
                }
            }
    return s;
}

void sigmoid_inplace(ScoreMap& s) {
    if (s.activation == Activation::Sigmoid) return;
    for (auto& v : s.data) v = 1.0f / (1.0f + std::exp(-v));
    s.activation = Activation::Sigmoid;
}

}  // namespace jshead
