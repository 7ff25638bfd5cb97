#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jshead/head.hpp"
#include "jshead/synth.hpp"

namespace jshead {

enum class QuantMode { Int8, Int16 };

inline int quant_limit(QuantMode m) { return m == QuantMode::Int8 ? 127 : 32767; }
inline const char* quant_mode_name(QuantMode m) { return m == QuantMode::Int8 ? "int8" : "int16"; }

// Weights-only symmetric per-row quantization of a pack kernel. Activations
// stay float; the per-row scale folds back in after accumulation.
struct QuantizedKernel {
    QuantMode mode = QuantMode::Int8;
    std::size_t classes = 0;
    std::size_t dims = 0;
    std::vector<std::int16_t> values;  // K x D, |v| <= 127 or 32767
    std::vector<float> scales;         // K, max_row_abs / limit; zero rows get 1
    float logit_bias = 0.0f;

    const std::int16_t* row(std::size_t k) const { return values.data() + k * dims; }
    void validate() const;
};

// Rounding is half-away-from-zero, computed in double.
QuantizedKernel quantize_kernel(const VocabularyPack& pack, QuantMode mode);

// value * scale per row, as exact products (an int16 times a float fits a
// double mantissa); elementwise error vs the original is <= scale/2.
std::vector<double> dequantize(const QuantizedKernel& q);

ScoreMap classify_quantized(const QuantizedKernel& q, const FeatureMap& features);

struct DriftReport {
    QuantMode mode = QuantMode::Int8;
    std::size_t cells = 0;
    double max_delta = 0.0;
    double mean_delta = 0.0;
    double top1_agreement = 1.0;
    std::vector<double> per_class_worst;  // max |score delta| per class
};

DriftReport drift_report(const VocabularyPack& pack, const QuantizedKernel& q,
                         const std::vector<SynthScene>& corpus);

std::string drift_report_csv(const DriftReport& r, const std::vector<std::string>& labels);

// Quantized DSPK: same container, header quantization = "int8"/"int16",
// blob = K per-row scales (f32 LE) then K*D values (i8/i16 LE).
struct QuantizedPack {
    std::vector<std::string> labels;
    float logit_scale = kDefaultLogitScale;
    bool normalized = true;
    QuantizedKernel kernel;
};

std::string encode_quantized_pack(const QuantizedPack& qp);
QuantizedPack decode_quantized_pack(const std::string& bytes);
void save_quantized_pack(const QuantizedPack& qp, const std::string& path);
QuantizedPack load_quantized_pack(const std::string& path);

}  // namespace jshead
