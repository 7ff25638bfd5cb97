#include "jshead/vocab.hpp"

#include <algorithm>

#include <json.hpp>

namespace jshead {

VocabularyPack build_vocab(const EmbeddingMatrix& embeddings, const AdaptorParams& adaptor,
                           float scale, float bias) {
    return reparameterize(forward(adaptor, embeddings), scale, bias);
}

VocabularyPack add_class(const VocabularyPack& pack, const std::string& label,
                         const std::vector<float>& raw_embedding, const AdaptorParams& adaptor) {
    if (raw_embedding.size() != pack.dims)
        throw ShapeError("new embedding dim " + std::to_string(raw_embedding.size()) +
                         " != pack dim " + std::to_string(pack.dims));
    if (std::find(pack.labels.begin(), pack.labels.end(), label) != pack.labels.end())
        throw ConflictError("label '" + label + "' already present");

    EmbeddingMatrix one;
    one.rows = 1;
    one.dims = pack.dims;
    one.data = raw_embedding;
    one.labels = {label};
    const VocabularyPack row =
        reparameterize(forward(adaptor, one), pack.logit_scale, pack.logit_bias);

    VocabularyPack out = pack;
    out.labels.push_back(label);
    out.kernel.insert(out.kernel.end(), row.kernel.begin(), row.kernel.end());
    return out;
}

VocabularyPack remove_class(const VocabularyPack& pack, const std::string& label) {
    const auto it = std::find(pack.labels.begin(), pack.labels.end(), label);
    if (it == pack.labels.end()) throw NotFoundError("label '" + label + "' not in pack");
    const std::size_t k = std::size_t(it - pack.labels.begin());
    VocabularyPack out = pack;
    out.labels.erase(out.labels.begin() + std::ptrdiff_t(k));
    out.kernel.erase(out.kernel.begin() + std::ptrdiff_t(k * pack.dims),
                     out.kernel.begin() + std::ptrdiff_t((k + 1) * pack.dims));
    return out;
}

namespace {

std::string assemble_dspk(const nlohmann::json& header, const std::string& blob) {
    ByteWriter w;
    w.magic("DSPK");
    const std::string hs = header.dump();
    w.u32(std::uint32_t(hs.size()));
    w.raw(hs.data(), hs.size());
    w.raw(blob.data(), blob.size());
    return w.buf;
}

nlohmann::json split_dspk(const std::string& bytes, std::string& blob_out) {
    ByteReader r(bytes);
    r.expect_magic("DSPK", "vocabulary pack");
    const std::uint32_t hlen = r.u32();
    const std::string hs = r.bytes(hlen);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad pack header: ") + e.what());
    }
    blob_out = r.bytes(r.remaining());
    return header;
}

}  // namespace

std::string encode_pack(const VocabularyPack& pack) {
    pack.validate();
    if (pack.classes() == 0) throw EmptyError("refusing to write empty pack");
    ByteWriter blob;
    for (float v : pack.kernel) blob.f32(v);

    nlohmann::json header;
    header["version"] = kDspkVersion;
    header["labels"] = pack.labels;
    header["k"] = pack.classes();
    header["d"] = pack.dims;
    header["alpha"] = pack.logit_scale;
    header["beta"] = pack.logit_bias;
    header["normalized"] = pack.normalized;
    header["quantization"] = "none";
    header["crc32"] = crc32_of(blob.buf);
    return assemble_dspk(header, blob.buf);
}

VocabularyPack decode_pack(const std::string& bytes) {
    std::string blob;
    const nlohmann::json header = split_dspk(bytes, blob);
    try {
        if (header.at("quantization").get<std::string>() != "none")
            throw FormatError("pack is quantized; load it with the quantized reader");
        if (header.at("crc32").get<std::uint32_t>() != crc32_of(blob))
            throw CorruptionError("pack blob CRC mismatch");
        VocabularyPack pack;
        pack.labels = header.at("labels").get<std::vector<std::string>>();
        pack.dims = header.at("d").get<std::size_t>();
        pack.logit_scale = header.at("alpha").get<float>();
        pack.logit_bias = header.at("beta").get<float>();
        pack.normalized = header.at("normalized").get<bool>();
        const std::size_t k = header.at("k").get<std::size_t>();
        if (k != pack.labels.size()) throw FormatError("pack header K != label count");
        if (blob.size() != k * pack.dims * 4)
            throw LengthError("pack blob is " + std::to_string(blob.size()) +
                              " bytes, expected " + std::to_string(k * pack.dims * 4));
        ByteReader br(blob);
        pack.kernel.resize(k * pack.dims);
        for (auto& v : pack.kernel) v = br.f32();
        pack.validate();
        return pack;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad pack header: ") + e.what());
    }
}

std::string pack_quantization_mode(const std::string& bytes) {
    std::string blob;
    const nlohmann::json header = split_dspk(bytes, blob);
    try {
        return header.at("quantization").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad pack header: ") + e.what());
    }
}

void save_pack(const VocabularyPack& pack, const std::string& path) {
    write_file_bytes(path, encode_pack(pack));
}

VocabularyPack load_pack(const std::string& path) {
    return decode_pack(read_file_bytes(path));
}

}  // namespace jshead
