#include "jshead/adaptor.hpp"

#include <cmath>

namespace jshead {

namespace {
std::atomic<std::uint64_t> g_forward_calls{0};
}

std::uint64_t adaptor_forward_calls() { return g_forward_calls.load(); }

namespace detail {
void count_adaptor_forward() { g_forward_calls.fetch_add(1, std::memory_order_relaxed); }
}

AdaptorParams init_params(const AdaptorConfig& cfg) {
    cfg.validate();
    AdaptorParams p;
    p.dim = cfg.dim;
    p.layers.resize(cfg.num_layers);
    Rng rng(cfg.seed);
    const double bound = std::sqrt(6.0 / (2.0 * double(cfg.dim)));
    for (auto& layer : p.layers) {
        layer.weight.resize(cfg.dim * cfg.dim);
        for (auto& w : layer.weight) w = static_cast<float>(rng.uniform(-bound, bound));
        layer.bias.assign(cfg.dim, 0.0f);
    }
    return p;
}

EmbeddingMatrix forward(const AdaptorParams& p, const EmbeddingMatrix& e) {
    e.validate();
    if (p.num_layers() > 0 && e.dims != p.dim)
        throw ShapeError("embedding dim " + std::to_string(e.dims) + " != adaptor dim " +
                         std::to_string(p.dim));
    EmbeddingMatrix out = e;
    if (p.num_layers() == 0) {
        detail::count_adaptor_forward();
        return out;
    }
    out.data = adaptor_forward(p, e.data.data(), e.rows);
    return out;
}

std::string encode_adaptor(const AdaptorParams& p) {
    p.validate();
    ByteWriter w;
    w.magic("DSAD");
    w.u32(kDsadVersion);
    w.u32(static_cast<std::uint32_t>(p.num_layers()));
    w.u32(static_cast<std::uint32_t>(p.dim));
    for (const auto& layer : p.layers) {
        for (float v : layer.weight) w.f32(v);
        for (float v : layer.bias) w.f32(v);
    }
    return w.buf;
}

AdaptorParams decode_adaptor(const std::string& bytes) {
    ByteReader r(bytes);
    r.expect_magic("DSAD", "adaptor checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kDsadVersion)
        throw FormatError("unsupported DSAD version " + std::to_string(version));
    const std::uint32_t n = r.u32();
    const std::uint32_t d = r.u32();
    if (n > kMaxAdaptorLayers) throw FormatError("layer count " + std::to_string(n) + " too large");
    if (n > 0 && d == 0) throw EmptyError("adaptor dim is zero");
    AdaptorParams p;
    p.dim = d;
    p.layers.resize(n);
    const std::size_t expect = std::size_t(n) * (std::size_t(d) * d + d) * 4;
    if (r.remaining() != expect)
        throw LengthError("adaptor payload is " + std::to_string(r.remaining()) +
                          " bytes, expected " + std::to_string(expect));
    for (auto& layer : p.layers) {
        layer.weight.resize(std::size_t(d) * d);
        for (auto& v : layer.weight) v = r.f32();
        layer.bias.resize(d);
        for (auto& v : layer.bias) v = r.f32();
    }
    p.validate();
    return p;
}

AdaptorParams load_adaptor(const std::string& path) {
    return decode_adaptor(read_file_bytes(path));
}

void save_adaptor(const AdaptorParams& p, const std::string& path) {
    write_file_bytes(path, encode_adaptor(p));
}

}  // namespace jshead
