#include <doctest.h>

#include <cmath>

#include "jshead/head.hpp"
#include "testutil.hpp"

using namespace jshead;

namespace {

FeatureMap random_features(std::size_t batch, std::size_t channels, std::size_t h, std::size_t w,
                           std::uint64_t seed) {
    Rng rng(seed);
    FeatureMap f;
    f.stride = 8;
    f.batch = batch;
    f.channels = channels;
    f.height = h;
    f.width = w;
    f.data.resize(f.size());
    for (auto& v : f.data) v = static_cast<float>(rng.gaussian());
    return f;
}

// independent dense cosine oracle: plain double loops over the raw layout
double oracle_logit(const EmbeddingMatrix& emb, const FeatureMap& f, std::size_t b, std::size_t k,
                    std::size_t y, std::size_t x, double scale, double bias) {
    double dot = 0, fn = 0, en = 0;
    for (std::size_t c = 0; c < f.channels; ++c) {
        const double fv = f.data[((b * f.channels + c) * f.height + y) * f.width + x];
        const double ev = emb.data[k * emb.dims + c];
        dot += fv * ev;
        fn += fv * fv;
        en += ev * ev;
    }
    if (fn <= 1e-24 || en <= 1e-24) return bias;
    return scale * dot / (std::sqrt(fn) * std::sqrt(en)) + bias;
}

}  // namespace

TEST_CASE("score_online basics") {
    const float alpha = 2.5f, beta = -1.0f;

    SUBCASE("feature equal to the unit embedding scores alpha + beta") {
        EmbeddingMatrix e;
        e.rows = 1;
        e.dims = 2;
        e.data = {0.6f, 0.8f};
        FeatureMap f;
        f.batch = 1;
        f.channels = 2;
        f.height = 1;
        f.width = 1;
        f.data = {0.6f, 0.8f};
        const ScoreMap s = score_online(e, f, alpha, beta);
        CHECK(s.at(0, 0, 0, 0) == doctest::Approx(alpha + beta).epsilon(1e-6));
    }
    SUBCASE("orthogonal feature scores beta") {
        EmbeddingMatrix e;
        e.rows = 1;
        e.dims = 2;
        e.data = {1.0f, 0.0f};
        FeatureMap f;
        f.batch = 1;
        f.channels = 2;
        f.height = 1;
        f.width = 1;
        f.data = {0.0f, 3.0f};
        const ScoreMap s = score_online(e, f, alpha, beta);
        CHECK(s.at(0, 0, 0, 0) == doctest::Approx(beta).epsilon(1e-7));
    }
    SUBCASE("matches the dense double-loop oracle: K=7 D=32 on 1x32x4x4") {
        const EmbeddingMatrix e = testutil::random_matrix(7, 32, 21);
        const FeatureMap f = random_features(1, 32, 4, 4, 22);
        const ScoreMap s = score_online(e, f, alpha, beta);
        for (std::size_t k = 0; k < 7; ++k)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t x = 0; x < 4; ++x)
                    CHECK(std::abs(double(s.at(0, k, y, x)) -
                                   oracle_logit(e, f, 0, k, y, x, alpha, beta)) < 1e-5);
    }
    SUBCASE("dimension mismatch") {
        const EmbeddingMatrix e = testutil::random_matrix(3, 8, 1);
        const FeatureMap f = random_features(1, 16, 2, 2, 2);
        CHECK_THROWS_AS(score_online(e, f, alpha, beta), ShapeError);
    }
}

TEST_CASE("reparameterize") {
    SUBCASE("normalize then scale: e=(3,4), alpha=2 -> (1.2, 1.6)") {
        EmbeddingMatrix e;
        e.rows = 1;
        e.dims = 2;
        e.data = {3.0f, 4.0f};
        const VocabularyPack pack = reparameterize(e, 2.0f, 0.0f);
        CHECK(pack.kernel[0] == doctest::Approx(1.2f).epsilon(1e-7));
        CHECK(pack.kernel[1] == doctest::Approx(1.6f).epsilon(1e-7));
        CHECK(pack.normalized);
        CHECK(pack.logit_bias == 0.0f);
    }
    SUBCASE("kernel is stored K x D") {
        const EmbeddingMatrix e = testutil::random_matrix(5, 12, 3);
        const VocabularyPack pack = reparameterize(e, kDefaultLogitScale, kDefaultLogitBias);
        CHECK(pack.classes() == 5);
        CHECK(pack.dims == 12);
        CHECK(pack.kernel.size() == 5u * 12u);
    }
    SUBCASE("zero-norm row names the label") {
        EmbeddingMatrix e = testutil::random_matrix(3, 4, 4, true);
        for (std::size_t d = 0; d < 4; ++d) e.row(2)[d] = 0.0f;
        CHECK_THROWS_WITH_AS(reparameterize(e, 1.0f, 0.0f),
                             "class 'label_2' has a zero-norm embedding", DegenerateError);
    }
}

TEST_CASE("conv path equals online path") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(seed + 100);
        const std::size_t K = 1 + rng.index(64);
        const std::size_t D = 1 + rng.index(128);
        const std::size_t H = 1 + rng.index(5);
        const std::size_t W = 1 + rng.index(5);
        const std::size_t B = 1 + rng.index(2);
        const EmbeddingMatrix e = testutil::random_matrix(K, D, seed * 3 + 1);
        const FeatureMap f = random_features(B, D, H, W, seed * 3 + 2);
        const float alpha = kDefaultLogitScale, beta = kDefaultLogitBias;
        const ScoreMap online = score_online(e, f, alpha, beta);
        const ScoreMap conv = classify_conv(reparameterize(e, alpha, beta), f);
        REQUIRE(conv.data.size() == online.data.size());
        for (std::size_t i = 0; i < conv.data.size(); ++i)
            CHECK(std::abs(double(conv.data[i]) - double(online.data[i])) < 1e-5);
    }
}

TEST_CASE("classify_conv edge cases") {
    SUBCASE("zero feature cell scores exactly beta for every class") {
        const EmbeddingMatrix e = testutil::random_matrix(4, 8, 9);
        FeatureMap f = random_features(1, 8, 2, 2, 10);
        for (std::size_t c = 0; c < 8; ++c) f.data[f.index(0, c, 1, 0)] = 0.0f;
        const VocabularyPack pack = reparameterize(e, 3.0f, -2.0f);
        const ScoreMap conv = classify_conv(pack, f);
        const ScoreMap online = score_online(e, f, 3.0f, -2.0f);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(conv.at(0, k, 1, 0) == -2.0f);
            CHECK(online.at(0, k, 1, 0) == -2.0f);
        }
    }
    SUBCASE("1203-class pack on a 1x512x20x20 map has shape 1x1203x20x20") {
        EmbeddingMatrix e = testutil::random_matrix(1203, 512, 11);
        const VocabularyPack pack = reparameterize(e, kDefaultLogitScale, kDefaultLogitBias);
        const FeatureMap f = random_features(1, 512, 20, 20, 12);
        const ScoreMap s = classify_conv(pack, f);
        CHECK(s.batch == 1);
        CHECK(s.classes == 1203);
        CHECK(s.height == 20);
        CHECK(s.width == 20);
    }
}

TEST_CASE("argmax invariance under positive scaling of alpha") {
    const EmbeddingMatrix e = testutil::random_matrix(9, 16, 31);
    const FeatureMap f = random_features(1, 16, 3, 3, 32);
    const ScoreMap a = score_online(e, f, 1.0f, -3.0f);
    const ScoreMap b = score_online(e, f, 7.5f, -3.0f);
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x) {
            std::size_t arg_a = 0, arg_b = 0;
            for (std::size_t k = 1; k < 9; ++k) {
                if (a.at(0, k, y, x) > a.at(0, arg_a, y, x)) arg_a = k;
                if (b.at(0, k, y, x) > b.at(0, arg_b, y, x)) arg_b = k;
            }
            CHECK(arg_a == arg_b);
        }
}

TEST_CASE("permuting vocabulary rows permutes score channels") {
    const EmbeddingMatrix e = testutil::random_matrix(5, 8, 41);
    const FeatureMap f = random_features(1, 8, 2, 2, 42);
    const std::vector<std::size_t> perm = {4, 2, 0, 1, 3};
    EmbeddingMatrix p;
    p.rows = 5;
    p.dims = 8;
    p.data.resize(e.data.size());
    for (std::size_t k = 0; k < 5; ++k)
        std::copy(e.row(perm[k]), e.row(perm[k]) + 8, p.row(k));
    const ScoreMap s0 = score_online(e, f, 2.0f, 0.0f);
    const ScoreMap s1 = score_online(p, f, 2.0f, 0.0f);
    for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t x = 0; x < 2; ++x)
                CHECK(s1.at(0, k, y, x) == s0.at(0, perm[k], y, x));
}

TEST_CASE("sigmoid tagging keeps probabilities in range") {
    const EmbeddingMatrix e = testutil::random_matrix(3, 8, 51);
    const FeatureMap f = random_features(1, 8, 2, 2, 52);
    ScoreMap s = score_online(e, f, kDefaultLogitScale, kDefaultLogitBias);
    sigmoid_inplace(s);
    CHECK(s.activation == Activation::Sigmoid);
    for (float v : s.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}
