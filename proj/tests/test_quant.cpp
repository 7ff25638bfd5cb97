#include <doctest.h>

#include <cmath>

#include "jshead/pipeline.hpp"
#include "jshead/quant.hpp"
#include "jshead/vocab.hpp"
#include "testutil.hpp"

using namespace jshead;
using testutil::TempDir;

namespace {

VocabularyPack random_pack(std::size_t k, std::size_t d, std::uint64_t seed) {
    AdaptorParams identity;
    identity.dim = d;
    return build_vocab(testutil::random_matrix(k, d, seed), identity);
}

SynthCorpus margin_corpus(std::uint64_t seed) {
    // foreground-dominated scenes: few large objects on a small grid
    SynthSpec s;
    s.num_classes = 8;
    s.dim = 16;
    s.map = GenMap::Linear;
    s.sigma = 0.05f;
    s.grid.image_size = 64;
    s.grid.levels = {{8, 8, 8}};
    s.objects_min = 2;
    s.objects_max = 3;
    s.seed = seed;
    return gen_corpus(s, 6);
}

}  // namespace

TEST_CASE("quantize_kernel") {
    SUBCASE("all-zero kernel: zero values, unit scales") {
        VocabularyPack pack;
        pack.labels = {"a", "b"};
        pack.dims = 3;
        pack.kernel.assign(6, 0.0f);
        pack.normalized = false;
        const QuantizedKernel q = quantize_kernel(pack, QuantMode::Int8);
        for (auto v : q.values) CHECK(v == 0);
        for (float s : q.scales) CHECK(s == 1.0f);
    }
    SUBCASE("row (1.0, -0.5) in int8: values (127, -64), scale 1/127") {
        VocabularyPack pack;
        pack.labels = {"a"};
        pack.dims = 2;
        pack.kernel = {1.0f, -0.5f};
        pack.normalized = false;
        const QuantizedKernel q = quantize_kernel(pack, QuantMode::Int8);
        CHECK(q.values[0] == 127);
        CHECK(q.values[1] == -64);  // -63.5 rounds away from zero
        CHECK(q.scales[0] == doctest::Approx(1.0 / 127.0).epsilon(1e-9));
    }
    SUBCASE("dequantization error is within half a scale step, both modes") {
        for (QuantMode mode : {QuantMode::Int8, QuantMode::Int16}) {
            for (std::uint64_t seed = 0; seed < 4; ++seed) {
                const VocabularyPack pack = random_pack(16, 32, 100 + seed);
                const QuantizedKernel q = quantize_kernel(pack, mode);
                const std::vector<double> dq = dequantize(q);
                for (std::size_t k = 0; k < q.classes; ++k)
                    for (std::size_t d = 0; d < q.dims; ++d) {
                        const double err =
                            std::abs(dq[k * q.dims + d] - double(pack.kernel[k * q.dims + d]));
                        CHECK(err <= double(q.scales[k]) / 2.0);
                    }
            }
        }
    }
}

TEST_CASE("classify_quantized") {
    SUBCASE("int16 stays within 1e-3 of the float path") {
        const VocabularyPack pack = random_pack(64, 512, 200);
        const QuantizedKernel q = quantize_kernel(pack, QuantMode::Int16);
        FeatureMap f;
        f.batch = 1;
        f.channels = 512;
        f.height = 4;
        f.width = 4;
        Rng rng(201);
        f.data.resize(f.size());
        for (auto& v : f.data) v = float(rng.gaussian());
        const ScoreMap sf = classify_conv(pack, f);
        const ScoreMap sq = classify_quantized(q, f);
        for (std::size_t i = 0; i < sf.data.size(); ++i)
            CHECK(std::abs(double(sf.data[i]) - double(sq.data[i])) < 1e-3);
    }
    SUBCASE("zero feature scores exactly beta in any mode") {
        const VocabularyPack pack = random_pack(5, 8, 202);
        FeatureMap f;
        f.batch = 1;
        f.channels = 8;
        f.height = 1;
        f.width = 1;
        f.data.assign(8, 0.0f);
        for (QuantMode mode : {QuantMode::Int8, QuantMode::Int16}) {
            const ScoreMap s = classify_quantized(quantize_kernel(pack, mode), f);
            for (std::size_t k = 0; k < 5; ++k) CHECK(s.at(0, k, 0, 0) == pack.logit_bias);
        }
    }
    SUBCASE("argmax agrees whenever the float margin beats the quantization bound") {
        const VocabularyPack pack = random_pack(12, 24, 203);
        for (QuantMode mode : {QuantMode::Int8, QuantMode::Int16}) {
            const QuantizedKernel q = quantize_kernel(pack, mode);
            FeatureMap f;
            f.batch = 1;
            f.channels = 24;
            f.height = 6;
            f.width = 6;
            Rng rng(204);
            f.data.resize(f.size());
            for (auto& v : f.data) v = float(rng.gaussian());
            const ScoreMap sf = classify_conv(pack, f);
            const ScoreMap sq = classify_quantized(q, f);
            for (std::size_t y = 0; y < 6; ++y)
                for (std::size_t x = 0; x < 6; ++x) {
                    std::size_t b1 = 0;
                    for (std::size_t k = 1; k < 12; ++k)
                        if (sf.at(0, k, y, x) > sf.at(0, b1, y, x)) b1 = k;
                    double second = -1e30;
                    std::size_t b2 = b1;
                    for (std::size_t k = 0; k < 12; ++k)
                        if (k != b1 && sf.at(0, k, y, x) > second) {
                            second = sf.at(0, k, y, x);
                            b2 = k;
                        }
                    const double margin = double(sf.at(0, b1, y, x)) - second;
                    const double bound =
                        24.0 * (double(q.scales[b1]) + double(q.scales[b2])) / 2.0;
                    if (margin > bound) {
                        std::size_t qb = 0;
                        for (std::size_t k = 1; k < 12; ++k)
                            if (sq.at(0, k, y, x) > sq.at(0, qb, y, x)) qb = k;
                        CHECK(qb == b1);
                    }
                }
        }
    }
}

TEST_CASE("drift on the margin-separated corpus") {
    const SynthCorpus corpus = margin_corpus(300);
    AdaptorParams identity;
    identity.dim = corpus.spec.dim;
    const VocabularyPack pack = build_vocab(corpus.class_embeddings, identity);

    const QuantizedKernel q8 = quantize_kernel(pack, QuantMode::Int8);
    const QuantizedKernel q16 = quantize_kernel(pack, QuantMode::Int16);
    const DriftReport r8 = drift_report(pack, q8, corpus.scenes);
    const DriftReport r16 = drift_report(pack, q16, corpus.scenes);

    CHECK(r8.top1_agreement >= 0.99);
    CHECK(r16.top1_agreement >= r8.top1_agreement);
    CHECK(r16.max_delta <= r8.max_delta);

    SUBCASE("int16 never loses to int8 on other corpora either") {
        SynthSpec s;
        s.num_classes = 12;
        s.dim = 24;
        s.map = GenMap::Nonlinear;
        s.sigma = 0.2f;
        s.grid.image_size = 64;
        s.grid.levels = {{8, 8, 8}};
        s.objects_min = 1;
        s.objects_max = 4;
        s.seed = 301;
        const SynthCorpus other = gen_corpus(s, 4);
        AdaptorParams id2;
        id2.dim = s.dim;
        const VocabularyPack p2 = build_vocab(other.class_embeddings, id2);
        const DriftReport o8 =
            drift_report(p2, quantize_kernel(p2, QuantMode::Int8), other.scenes);
        const DriftReport o16 =
            drift_report(p2, quantize_kernel(p2, QuantMode::Int16), other.scenes);
        CHECK(o16.top1_agreement >= o8.top1_agreement);
    }
    SUBCASE("report is deterministic CSV") {
        const std::string csv1 = drift_report_csv(r8, pack.labels);
        const std::string csv2 = drift_report_csv(drift_report(pack, q8, corpus.scenes),
                                                  pack.labels);
        CHECK(csv1 == csv2);
        CHECK(csv1.find("top1_agreement") != std::string::npos);
        CHECK(csv1.find("class_worst_delta,class_0") != std::string::npos);
    }
}

TEST_CASE("quantized pack file") {
    TempDir tmp("qpack");
    const VocabularyPack pack = random_pack(9, 20, 400);
    for (QuantMode mode : {QuantMode::Int8, QuantMode::Int16}) {
        QuantizedPack qp;
        qp.labels = pack.labels;
        qp.logit_scale = pack.logit_scale;
        qp.normalized = pack.normalized;
        qp.kernel = quantize_kernel(pack, mode);
        const std::string path = tmp.file(std::string("p_") + quant_mode_name(mode) + ".dspk");
        save_quantized_pack(qp, path);
        const QuantizedPack back = load_quantized_pack(path);
        CHECK(back.labels == qp.labels);
        CHECK(back.kernel.mode == mode);
        CHECK(back.kernel.values == qp.kernel.values);
        CHECK(testutil::bits_equal(back.kernel.scales, qp.kernel.scales));
        CHECK(encode_quantized_pack(back) == encode_quantized_pack(qp));
        CHECK(pack_quantization_mode(read_file_bytes(path)) == quant_mode_name(mode));

        std::string corrupt = encode_quantized_pack(qp);
        corrupt[corrupt.size() - 1] ^= 0x01;
        CHECK_THROWS_AS(decode_quantized_pack(corrupt), CorruptionError);
    }
    SUBCASE("float reader refuses quantized packs and vice versa") {
        QuantizedPack qp;
        qp.labels = pack.labels;
        qp.logit_scale = pack.logit_scale;
        qp.kernel = quantize_kernel(pack, QuantMode::Int8);
        CHECK_THROWS_AS(decode_pack(encode_quantized_pack(qp)), FormatError);
        CHECK_THROWS_AS(decode_quantized_pack(encode_pack(pack)), FormatError);
    }
}
