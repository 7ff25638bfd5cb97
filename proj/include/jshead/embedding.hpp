#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "jshead/common.hpp"

namespace jshead {

// K x D row-major matrix of text embeddings, raw or adapted.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t dims = 0;
    std::vector<float> data;           // rows * dims
    std::vector<std::string> labels;   // empty, or exactly `rows` entries

    float* row(std::size_t r) { return data.data() + r * dims; }
    const float* row(std::size_t r) const { return data.data() + r * dims; }

    bool has_labels() const { return !labels.empty(); }

    // Checks invariants: data length, label count, finiteness.
    void validate() const;
};

// DSEM container layout (little-endian):
//   bytes 0-3   magic "DSEM"
//   bytes 4-7   version u32 = 1
//   bytes 8-11  K u32
//   bytes 12-15 D u32
//   byte  16    dtype u8 (0 = f32)
//   bytes 17-19 reserved, zero
//   payload     K*D f32, row-major
// Labels, when present, live in a sibling `<name>.labels.json` file holding a
// single top-level array of K strings.
inline constexpr std::uint32_t kDsemVersion = 1;

EmbeddingMatrix read_embeddings(const std::string& path);
void write_embeddings(const EmbeddingMatrix& m, const std::string& path);

// Path of the sibling labels file for a given DSEM path.
std::string labels_path_for(const std::string& dsem_path);

// Serialized DSEM bytes (no labels), used by the file writers and fixtures.
std::string encode_embeddings(const EmbeddingMatrix& m);
EmbeddingMatrix decode_embeddings(const std::string& bytes);

// Returns a copy with every row scaled to unit Euclidean norm.
// Throws DegenerateError naming the first row whose norm is <= 1e-12.
EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m);

}  // namespace jshead
