#include "jshead/quant.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace jshead {

void QuantizedKernel::validate() const {
    if (values.size() != classes * dims || scales.size() != classes)
        throw ShapeError("quantized kernel shape mismatch");
    const int limit = quant_limit(mode);
    for (std::int16_t v : values)
        if (v < -limit || v > limit)
            throw DataError("quantized value " + std::to_string(v) + " out of range");
    for (float s : scales)
        if (!(s > 0.0f) || !std::isfinite(s)) throw DataError("non-positive row scale");
}

QuantizedKernel quantize_kernel(const VocabularyPack& pack, QuantMode mode) {
    pack.validate();
    QuantizedKernel q;
    q.mode = mode;
    q.classes = pack.classes();
    q.dims = pack.dims;
    q.logit_bias = pack.logit_bias;
    q.values.resize(q.classes * q.dims);
    q.scales.resize(q.classes);
    const int limit = quant_limit(mode);
    for (std::size_t k = 0; k < q.classes; ++k) {
        const float* row = pack.kernel_row(k);
        double m = 0.0;
        for (std::size_t d = 0; d < q.dims; ++d) m = std::max(m, std::abs(double(row[d])));
        const double scale = m > 0.0 ? m / double(limit) : 1.0;
        q.scales[k] = static_cast<float>(scale);
        std::int16_t* dst = q.values.data() + k * q.dims;
        for (std::size_t d = 0; d < q.dims; ++d) {
            const double v = std::round(double(row[d]) / double(q.scales[k]));
            dst[d] = static_cast<std::int16_t>(std::clamp(v, -double(limit), double(limit)));
        }
    }
    return q;
}

std::vector<double> dequantize(const QuantizedKernel& q) {
    q.validate();
    std::vector<double> out(q.values.size());
    for (std::size_t k = 0; k < q.classes; ++k)
        for (std::size_t d = 0; d < q.dims; ++d)
            out[k * q.dims + d] = double(q.values[k * q.dims + d]) * double(q.scales[k]);
    return out;
}

ScoreMap classify_quantized(const QuantizedKernel& q, const FeatureMap& features) {
    features.validate();
    q.validate();
    if (q.dims != features.channels)
        throw ShapeError("quantized kernel dim " + std::to_string(q.dims) +
                         " != feature channels " + std::to_string(features.channels));
    ScoreMap s;
    s.batch = features.batch;
    s.classes = q.classes;
    s.height = features.height;
    s.width = features.width;
    s.data.resize(s.batch * q.classes * s.height * s.width);
    s.activation = Activation::Logit;

    const std::size_t plane = features.height * features.width;
    std::vector<float> cell(features.channels);
    for (std::size_t b = 0; b < features.batch; ++b)
        for (std::size_t y = 0; y < features.height; ++y)
            for (std::size_t x = 0; x < features.width; ++x) {
                const float* base =
                    features.data.data() + (b * features.channels) * plane + y * features.width + x;
                double sq = 0.0;
                for (std::size_t c = 0; c < features.channels; ++c) {
                    cell[c] = base[c * plane];
                    sq += double(cell[c]) * double(cell[c]);
                }
                if (sq > 1e-24) {
                    const double inv = 1.0 / std::sqrt(sq);
                    for (std::size_t k = 0; k < q.classes; ++k) {
                        const std::int16_t* row = q.row(k);
                        double acc = 0.0;
                        for (std::size_t c = 0; c < q.dims; ++c)
                            acc += double(row[c]) * double(cell[c]);
                        s.data[s.index(b, k, y, x)] = static_cast<float>(
                            double(q.scales[k]) * acc * inv + double(q.logit_bias));
                    }
                } else {
                    for (std::size_t k = 0; k < q.classes; ++k)
                        s.data[s.index(b, k, y, x)] = q.logit_bias;
                }
            }
    return s;
}

DriftReport drift_report(const VocabularyPack& pack, const QuantizedKernel& q,
                         const std::vector<SynthScene>& corpus) {
    if (pack.classes() != q.classes || pack.dims != q.dims)
        throw ShapeError("pack and quantized kernel shapes differ");
    DriftReport r;
    r.mode = q.mode;
    r.per_class_worst.assign(q.classes, 0.0);
    double sum_delta = 0.0;
    std::size_t agree = 0, entries = 0;
    for (const auto& scene : corpus) {
        for (const auto& lvl : scene.levels) {
            const ScoreMap sf = classify_conv(pack, lvl.features);
            const ScoreMap sq = classify_quantized(q, lvl.features);
            for (std::size_t y = 0; y < sf.height; ++y)
                for (std::size_t x = 0; x < sf.width; ++x) {
                    std::size_t best_f = 0, best_q = 0;
                    for (std::size_t k = 0; k < sf.classes; ++k) {
                        const double d =
                            std::abs(double(sf.at(0, k, y, x)) - double(sq.at(0, k, y, x)));
                        r.max_delta = std::max(r.max_delta, d);
                        r.per_class_worst[k] = std::max(r.per_class_worst[k], d);
                        sum_delta += d;
                        ++entries;
                        if (sf.at(0, k, y, x) > sf.at(0, best_f, y, x)) best_f = k;
                        if (sq.at(0, k, y, x) > sq.at(0, best_q, y, x)) best_q = k;
                    }
                    ++r.cells;
                    if (best_f == best_q) ++agree;
                }
        }
    }
    r.mean_delta = entries > 0 ? sum_delta / double(entries) : 0.0;
    r.top1_agreement = r.cells > 0 ? double(agree) / double(r.cells) : 1.0;
    return r;
}

std::string drift_report_csv(const DriftReport& r, const std::vector<std::string>& labels) {
    std::string out = "metric,label,value\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "mode,,%s\n", quant_mode_name(r.mode));
    out += buf;
    std::snprintf(buf, sizeof(buf), "cells,,%zu\n", r.cells);
    out += buf;
    std::snprintf(buf, sizeof(buf), "max_score_delta,,%.9g\n", r.max_delta);
    out += buf;
    std::snprintf(buf, sizeof(buf), "mean_score_delta,,%.9g\n", r.mean_delta);
    out += buf;
    std::snprintf(buf, sizeof(buf), "top1_agreement,,%.9g\n", r.top1_agreement);
    out += buf;
    for (std::size_t k = 0; k < r.per_class_worst.size(); ++k) {
        const std::string label = k < labels.size() ? labels[k] : std::to_string(k);
        std::snprintf(buf, sizeof(buf), "class_worst_delta,%s,%.9g\n", label.c_str(),
                      r.per_class_worst[k]);
        out += buf;
    }
    return out;
}

std::string encode_quantized_pack(const QuantizedPack& qp) {
    qp.kernel.validate();
    if (qp.labels.size() != qp.kernel.classes)
        throw ShapeError("label count != quantized kernel rows");
    ByteWriter blob;
    for (float s : qp.kernel.scales) blob.f32(s);
    if (qp.kernel.mode == QuantMode::Int8) {
        for (std::int16_t v : qp.kernel.values)
            blob.u8(std::bit_cast<std::uint8_t>(static_cast<std::int8_t>(v)));
    } else {
        for (std::int16_t v : qp.kernel.values) {
            const auto u = std::bit_cast<std::uint16_t>(v);
            blob.u8(std::uint8_t(u & 0xff));
            blob.u8(std::uint8_t(u >> 8));
        }
    }

    nlohmann::json header;
    header["version"] = 1;
    header["labels"] = qp.labels;
    header["k"] = qp.kernel.classes;
    header["d"] = qp.kernel.dims;
    header["alpha"] = qp.logit_scale;
    header["beta"] = qp.kernel.logit_bias;
    header["normalized"] = qp.normalized;
    header["quantization"] = quant_mode_name(qp.kernel.mode);
    header["crc32"] = crc32_of(blob.buf);

    ByteWriter w;
    w.magic("DSPK");
    const std::string hs = header.dump();
    w.u32(std::uint32_t(hs.size()));
    w.raw(hs.data(), hs.size());
    w.raw(blob.buf.data(), blob.buf.size());
    return w.buf;
}

QuantizedPack decode_quantized_pack(const std::string& bytes) {
    ByteReader r(bytes);
    r.expect_magic("DSPK", "quantized pack");
    const std::uint32_t hlen = r.u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad pack header: ") + e.what());
    }
    const std::string blob = r.bytes(r.remaining());
    try {
        const std::string qmode = header.at("quantization").get<std::string>();
        if (qmode != "int8" && qmode != "int16")
            throw FormatError("pack is not quantized; use the float reader");
        if (header.at("crc32").get<std::uint32_t>() != crc32_of(blob))
            throw CorruptionError("pack blob CRC mismatch");
        QuantizedPack qp;
        qp.labels = header.at("labels").get<std::vector<std::string>>();
        qp.logit_scale = header.at("alpha").get<float>();
        qp.normalized = header.at("normalized").get<bool>();
        qp.kernel.mode = qmode == "int8" ? QuantMode::Int8 : QuantMode::Int16;
        qp.kernel.classes = header.at("k").get<std::size_t>();
        qp.kernel.dims = header.at("d").get<std::size_t>();
        qp.kernel.logit_bias = header.at("beta").get<float>();
        const std::size_t n = qp.kernel.classes * qp.kernel.dims;
        const std::size_t vbytes = qp.kernel.mode == QuantMode::Int8 ? n : 2 * n;
        if (blob.size() != qp.kernel.classes * 4 + vbytes)
            throw LengthError("quantized pack blob size mismatch");
        ByteReader br(blob);
        qp.kernel.scales.resize(qp.kernel.classes);
        for (auto& s : qp.kernel.scales) s = br.f32();
        qp.kernel.values.resize(n);
        if (qp.kernel.mode == QuantMode::Int8) {
            for (auto& v : qp.kernel.values)
                v = static_cast<std::int16_t>(std::bit_cast<std::int8_t>(br.u8()));
        } else {
            for (auto& v : qp.kernel.values) {
                const std::uint16_t lo = br.u8();
                const std::uint16_t hi = br.u8();
                v = std::bit_cast<std::int16_t>(std::uint16_t(lo | (hi << 8)));
            }
        }
        qp.kernel.validate();
        return qp;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad pack header: ") + e.what());
    }
}

void save_quantized_pack(const QuantizedPack& qp, const std::string& path) {
    write_file_bytes(path, encode_quantized_pack(qp));
}

QuantizedPack load_quantized_pack(const std::string& path) {
    return decode_quantized_pack(read_file_bytes(path));
}

}  // namespace jshead
