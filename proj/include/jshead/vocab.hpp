#pragma once

#include <string>
#include <vector>

#include "jshead/adaptor.hpp"
#include "jshead/embedding.hpp"
#include "jshead/head.hpp"

namespace jshead {

// Offline prompt-then-detect pipeline: raw embeddings -> adaptor -> pack.
VocabularyPack build_vocab(const EmbeddingMatrix& embeddings, const AdaptorParams& adaptor,
                           float scale = kDefaultLogitScale, float bias = kDefaultLogitBias);

// Appends one class; existing kernel rows are carried over bit-unchanged
// (the adaptor is row-independent, so this is exact).
VocabularyPack add_class(const VocabularyPack& pack, const std::string& label,
                         const std::vector<float>& raw_embedding, const AdaptorParams& adaptor);

VocabularyPack remove_class(const VocabularyPack& pack, const std::string& label);

// DSPK container: magic "DSPK", u32 header length, UTF-8 JSON header
// (labels, k, d, alpha, beta, normalized, quantization, crc32 of blob),
// then the blob. Float packs store the kernel as K*D f32 LE; quantized packs
// store K f32 per-row scales followed by K*D i8/i16 values.
inline constexpr std::uint32_t kDspkVersion = 1;

std::string encode_pack(const VocabularyPack& pack);
VocabularyPack decode_pack(const std::string& bytes);
void save_pack(const VocabularyPack& pack, const std::string& path);
VocabularyPack load_pack(const std::string& path);

// Quantization mode string recorded in a DSPK header ("none"/"int8"/"int16")
// without materializing the pack; used to route loads.
std::string pack_quantization_mode(const std::string& bytes);

}  // namespace jshead
