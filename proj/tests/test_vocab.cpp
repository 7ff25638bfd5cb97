#include <doctest.h>

#include <cmath>

#include "jshead/vocab.hpp"
#include "testutil.hpp"

using namespace jshead;
using testutil::TempDir;

namespace {

AdaptorParams identity_adaptor(std::size_t dim) {
    AdaptorParams p;
    p.dim = dim;
    return p;
}

}  // namespace

TEST_CASE("build_vocab") {
    SUBCASE("identity adaptor: kernel = normalized raw embeddings * alpha") {
        const EmbeddingMatrix e = testutil::random_matrix(6, 12, 61, true);
        const VocabularyPack pack = build_vocab(e, identity_adaptor(12), 2.0f, -1.0f);
        const EmbeddingMatrix unit = l2_normalize_rows(e);
        for (std::size_t i = 0; i < pack.kernel.size(); ++i)
            CHECK(pack.kernel[i] == doctest::Approx(2.0f * unit.data[i]).epsilon(1e-6));
        CHECK(pack.labels == e.labels);
    }
    SUBCASE("building twice is bit-identical") {
        const EmbeddingMatrix e = testutil::random_matrix(9, 16, 62);
        const AdaptorParams a = init_params({3, 16, 5});
        const VocabularyPack p1 = build_vocab(e, a);
        const VocabularyPack p2 = build_vocab(e, a);
        CHECK(encode_pack(p1) == encode_pack(p2));
    }
    SUBCASE("an 80-class embedding file builds an 80-class pack") {
        TempDir tmp("coco");
        EmbeddingMatrix e = testutil::random_matrix(80, 64, 63);
        for (std::size_t k = 0; k < 80; ++k) e.labels.push_back("coco_" + std::to_string(k));
        const std::string path = tmp.file("coco80.dsem");
        write_embeddings(e, path);
        const VocabularyPack pack =
            build_vocab(read_embeddings(path), identity_adaptor(64));
        CHECK(pack.classes() == 80);
        CHECK(pack.labels[79] == "coco_79");
    }
}

TEST_CASE("add_class / remove_class") {
    const EmbeddingMatrix e = testutil::random_matrix(5, 8, 64, true);
    const AdaptorParams adaptor = init_params({2, 8, 7});
    const VocabularyPack base = build_vocab(e, adaptor);
    Rng rng(65);

    SUBCASE("add then remove restores the original bit-for-bit") {
        std::vector<float> emb(8);
        for (auto& v : emb) v = float(rng.gaussian());
        const VocabularyPack grown = add_class(base, "extra", emb, adaptor);
        CHECK(grown.classes() == 6);
        const VocabularyPack back = remove_class(grown, "extra");
        CHECK(encode_pack(back) == encode_pack(base));
    }
    SUBCASE("adding to an identity-adaptor pack appends normalized * alpha") {
        const VocabularyPack id_pack = build_vocab(e, identity_adaptor(8), 3.0f, 0.0f);
        std::vector<float> emb = {3, 0, 0, 0, 0, 0, 0, 4};
        const VocabularyPack grown = add_class(id_pack, "new", emb, identity_adaptor(8));
        const float* row = grown.kernel_row(5);
        CHECK(row[0] == doctest::Approx(3.0f * 0.6f).epsilon(1e-6));
        CHECK(row[7] == doctest::Approx(3.0f * 0.8f).epsilon(1e-6));
    }
    SUBCASE("existing rows never move: grow 80 -> 1203") {
        EmbeddingMatrix coco = testutil::random_matrix(80, 32, 66, true);
        const AdaptorParams a = init_params({3, 32, 8});
        VocabularyPack pack = build_vocab(coco, a);
        const std::vector<float> original(pack.kernel);
        Rng grow_rng(67);
        for (int i = 0; i < 1123; ++i) {
            std::vector<float> emb(32);
            for (auto& v : emb) v = float(grow_rng.gaussian());
            pack = add_class(pack, "lvis_" + std::to_string(i), emb, a);
        }
        CHECK(pack.classes() == 1203);
        for (std::size_t i = 0; i < original.size(); ++i)
            CHECK(pack.kernel[i] == original[i]);
    }
    SUBCASE("duplicate label conflicts") {
        std::vector<float> emb(8, 1.0f);
        CHECK_THROWS_AS(add_class(base, base.labels[2], emb, adaptor), ConflictError);
    }
    SUBCASE("unknown label not found") {
        CHECK_THROWS_AS(remove_class(base, "no_such_label"), NotFoundError);
    }
    SUBCASE("wrong dimension") {
        std::vector<float> emb(9, 1.0f);
        CHECK_THROWS_AS(add_class(base, "bad", emb, adaptor), ShapeError);
    }
}

TEST_CASE("pack file format") {
    TempDir tmp("pack");
    const EmbeddingMatrix e = testutil::random_matrix(7, 10, 68, true);
    const VocabularyPack pack = build_vocab(e, identity_adaptor(10));

    SUBCASE("save/load roundtrip is exact") {
        const std::string path = tmp.file("p.dspk");
        save_pack(pack, path);
        const VocabularyPack back = load_pack(path);
        CHECK(back.labels == pack.labels);
        CHECK(back.dims == pack.dims);
        CHECK(back.logit_scale == pack.logit_scale);
        CHECK(back.logit_bias == pack.logit_bias);
        CHECK(back.normalized == pack.normalized);
        CHECK(testutil::bits_equal(back.kernel, pack.kernel));
        CHECK(encode_pack(back) == encode_pack(pack));
    }
    SUBCASE("CRC corruption is detected") {
        std::string bytes = encode_pack(pack);
        bytes[bytes.size() - 3] ^= 0x40;  // flip a bit inside the kernel blob
        CHECK_THROWS_AS(decode_pack(bytes), CorruptionError);
    }
    SUBCASE("quantization mode probe") {
        CHECK(pack_quantization_mode(encode_pack(pack)) == "none");
    }
    SUBCASE("truncated header") {
        const std::string bytes = encode_pack(pack);
        CHECK_THROWS_AS(decode_pack(bytes.substr(0, 6)), LengthError);
    }
}

TEST_CASE("scores of a class are independent of other rows") {
    const EmbeddingMatrix e = testutil::random_matrix(4, 8, 69, true);
    const AdaptorParams adaptor = init_params({1, 8, 9});
    const VocabularyPack pack = build_vocab(e, adaptor);

    FeatureMap f;
    f.batch = 1;
    f.channels = 8;
    f.height = 3;
    f.width = 3;
    Rng rng(70);
    f.data.resize(f.size());
    for (auto& v : f.data) v = float(rng.gaussian());

    const ScoreMap before = classify_conv(pack, f);
    std::vector<float> emb(8);
    for (auto& v : emb) v = float(rng.gaussian());
    const VocabularyPack grown = add_class(pack, "extra", emb, adaptor);
    const ScoreMap after = classify_conv(grown, f);
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 3; ++x)
                CHECK(after.at(0, k, y, x) == before.at(0, k, y, x));
}
