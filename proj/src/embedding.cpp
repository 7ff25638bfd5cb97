#include "jshead/embedding.hpp"

#include <cmath>
#include <filesystem>

#include <json.hpp>

namespace jshead {

void EmbeddingMatrix::validate() const {
    if (data.size() != rows * dims)
        throw LengthError("embedding data length " + std::to_string(data.size()) +
                          " != K*D = " + std::to_string(rows * dims));
    if (!labels.empty() && labels.size() != rows)
        throw DataError("label count " + std::to_string(labels.size()) + " != K = " +
                        std::to_string(rows));
    for (std::size_t i = 0; i < data.size(); ++i)
        if (!std::isfinite(data[i]))
            throw DataError("non-finite value at flat index " + std::to_string(i));
}

std::string encode_embeddings(const EmbeddingMatrix& m) {
    m.validate();
    if (m.rows == 0 || m.dims == 0) throw EmptyError("refusing to write empty matrix");
    ByteWriter w;
    w.magic("DSEM");
    w.u32(kDsemVersion);
    w.u32(static_cast<std::uint32_t>(m.rows));
    w.u32(static_cast<std::uint32_t>(m.dims));
    w.u8(0);  // dtype f32
    w.u8(0);
    w.u8(0);
    w.u8(0);
    for (float v : m.data) w.f32(v);
    return w.buf;
}

EmbeddingMatrix decode_embeddings(const std::string& bytes) {
    ByteReader r(bytes);
    r.expect_magic("DSEM", "embedding file");
    const std::uint32_t version = r.u32();
    if (version != kDsemVersion)
        throw FormatError("unsupported DSEM version " + std::to_string(version));
    EmbeddingMatrix m;
    m.rows = r.u32();
    m.dims = r.u32();
    const std::uint8_t dtype = r.u8();
    if (dtype != 0) throw FormatError("unsupported dtype code " + std::to_string(dtype));
    for (int i = 0; i < 3; ++i)
        if (r.u8() != 0) throw FormatError("nonzero reserved header byte");
    if (m.rows == 0 || m.dims == 0) throw EmptyError("empty matrix: K or D is zero");
    const std::size_t n = m.rows * m.dims;
    if (r.remaining() != n * 4)
        throw LengthError("payload holds " + std::to_string(r.remaining() / 4) +
                          " floats, expected K*D = " + std::to_string(n));
    m.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.data[i] = r.f32();
    m.validate();
    return m;
}

std::string labels_path_for(const std::string& dsem_path) {
    std::filesystem::path p(dsem_path);
    std::filesystem::path sib = p.parent_path() / (p.stem().string() + ".labels.json");
    return sib.string();
}

EmbeddingMatrix read_embeddings(const std::string& path) {
    EmbeddingMatrix m = decode_embeddings(read_file_bytes(path));
    const std::string lp = labels_path_for(path);
    if (std::filesystem::exists(lp)) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file_bytes(lp));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bad labels file " + lp + ": " + e.what());
        }
        if (!j.is_array()) throw FormatError("labels file must hold a top-level array");
        for (const auto& item : j) {
            if (!item.is_string()) throw FormatError("labels array must contain strings");
            m.labels.push_back(item.get<std::string>());
        }
        m.validate();
    }
    return m;
}

void write_embeddings(const EmbeddingMatrix& m, const std::string& path) {
    write_file_bytes(path, encode_embeddings(m));
    if (m.has_labels()) {
        nlohmann::json j = m.labels;
        write_file_bytes(labels_path_for(path), j.dump());
    }
}

EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m) {
    m.validate();
    EmbeddingMatrix out = m;
    for (std::size_t r = 0; r < m.rows; ++r) {
        const float* src = m.row(r);
        double sq = 0.0;
        for (std::size_t d = 0; d < m.dims; ++d) sq += double(src[d]) * double(src[d]);
        const double norm = std::sqrt(sq);
        if (norm <= 1e-12)
            throw DegenerateError("row " + std::to_string(r) + " has zero norm");
        float* dst = out.row(r);
        for (std::size_t d = 0; d < m.dims; ++d)
            dst[d] = static_cast<float>(double(src[d]) / norm);
    }
    return out;
}

}  // namespace jshead
