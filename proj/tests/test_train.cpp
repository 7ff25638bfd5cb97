#include <doctest.h>

#include <cmath>

#include "jshead/train.hpp"
#include "testutil.hpp"

using namespace jshead;

namespace {

SynthCorpus linear_corpus(std::uint64_t seed, std::size_t scenes = 4) {
    SynthSpec s;
    s.num_classes = 8;
    s.dim = 16;
    s.map = GenMap::Linear;
    s.sigma = 0.02f;
    s.grid.image_size = 96;
    s.grid.levels = {{8, 12, 12}};
    s.objects_min = 2;
    s.objects_max = 4;
    s.seed = seed;
    return gen_corpus(s, scenes);
}

}  // namespace

TEST_CASE("train_adaptor with lr = 0 leaves everything bit-identical") {
    const SynthCorpus corpus = linear_corpus(500);
    const AdaptorParams init = init_params({2, 16, 3});
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.lr = 0.0f;
    const TrainResult r = train_adaptor(init, corpus.class_embeddings, corpus.scenes, cfg);
    CHECK(encode_adaptor(r.params) == encode_adaptor(init));
    CHECK(r.alpha == cfg.alpha0);
    CHECK(r.beta == cfg.beta0);
    CHECK(r.history.size() == 10);
}

TEST_CASE("linear corpus with the identity adaptor is already aligned") {
    const SynthCorpus corpus = linear_corpus(501);
    AdaptorParams identity;
    identity.dim = 16;
    TrainConfig cfg;
    cfg.steps = 40;
    cfg.lr = 1e-2f;
    const TrainResult r =
        train_adaptor(identity, corpus.class_embeddings, corpus.scenes, cfg);
    CHECK(r.final_accuracy >= 0.95);
}

TEST_CASE("training reduces the classification loss on a nonlinear corpus") {
    SynthSpec s;
    s.num_classes = 8;
    s.dim = 16;
    s.map = GenMap::Nonlinear;
    s.sigma = 0.02f;
    s.grid.image_size = 96;
    s.grid.levels = {{8, 12, 12}};
    s.objects_min = 2;
    s.objects_max = 4;
    s.seed = 502;
    const SynthCorpus corpus = gen_corpus(s, 6);
    const AdaptorParams init = init_params({2, 16, 11});
    const double before = corpus_cell_accuracy(init, corpus.class_embeddings, corpus.scenes,
                                               kDefaultLogitScale, kDefaultLogitBias);
    TrainConfig cfg;
    cfg.steps = 400;
    cfg.lr = 0.5f;
    const TrainResult r = train_adaptor(init, corpus.class_embeddings, corpus.scenes, cfg);
    CHECK(r.final_accuracy > before + 0.1);
    CHECK(r.history.front().loss_cls > r.history.back().loss_cls);
}

TEST_CASE("non-finite loss reports a training error naming the last finite step") {
    SynthCorpus corpus = linear_corpus(503, 2);
    const AdaptorParams init = init_params({2, 16, 13});
    // poison the foreground regression logits so the dfl term goes NaN in the
    // very first full-batch pass
    REQUIRE(!corpus.scenes[1].gts.empty());
    auto& lvl = corpus.scenes[1].levels[0];
    for (std::size_t cell = 0; cell < lvl.oracle.size(); ++cell)
        if (lvl.oracle[cell] >= 0)
            lvl.dfl[cell * 4 * kRegMax] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg;
    cfg.steps = 200;
    cfg.lr = 1e-2f;
    try {
        train_adaptor(init, corpus.class_embeddings, corpus.scenes, cfg);
        FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
        CHECK(std::string(e.what()).find("diverged at step 0") != std::string::npos);
        CHECK(std::string(e.what()).find("last finite step none") != std::string::npos);
    }
}

TEST_CASE("training log format") {
    const SynthCorpus corpus = linear_corpus(504, 2);
    AdaptorParams identity;
    identity.dim = 16;
    TrainConfig cfg;
    cfg.steps = 3;
    const TrainResult r =
        train_adaptor(identity, corpus.class_embeddings, corpus.scenes, cfg);
    const std::string csv = train_log_csv(r.history);
    CHECK(csv.rfind("step,loss_cls,loss_iou,loss_dfl,loss_total,acc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 steps
}

TEST_CASE("end-to-end gradient through loss, head and adaptor matches finite differences") {
    // small double-precision instance with the assignment held fixed
    const std::size_t K = 4, D = 8;
    SynthSpec s;
    s.num_classes = K;
    s.dim = D;
    s.map = GenMap::Nonlinear;
    s.sigma = 0.05f;
    s.grid.image_size = 32;
    s.grid.levels = {{8, 4, 4}};  // 16 anchors
    s.objects_min = 1;
    s.objects_max = 2;
    s.seed = 505;
    const SynthCorpus corpus = gen_corpus(s, 1);
    const SynthScene& scene = corpus.scenes[0];

    const auto centers = make_anchor_centers(scene_grid(scene));
    const auto cell_boxes = anchor_cell_boxes(centers, scene.image_size);
    const auto feats_f = flatten_scene_features(scene);
    const std::vector<double> feats(feats_f.begin(), feats_f.end());
    std::vector<double> raw(corpus.class_embeddings.data.begin(),
                            corpus.class_embeddings.data.end());

    const AdaptorParamsT<double> params =
        convert_params<double>(init_params({2, D, 99}));
    const double alpha = kDefaultLogitScale, beta = kDefaultLogitBias;
    LossConfig lcfg;

    // freeze the assignment at the initial scores
    const auto adapted0 = adaptor_forward(params, raw.data(), K);
    const auto s0 = cosine_logits(feats, adapted0, D, alpha, beta);
    std::vector<float> probs(s0.logits.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
        probs[i] = float(1.0 / (1.0 + std::exp(-s0.logits[i])));
    const AssignmentResult asg = tal_assign(centers, probs, K, cell_boxes, scene.gts, lcfg);
    REQUIRE(asg.num_positive > 0);

    auto loss_of = [&](const AdaptorParamsT<double>& p) {
        const auto adapted = adaptor_forward(p, raw.data(), K);
        const auto sc = cosine_logits(feats, adapted, D, alpha, beta);
        return double(cls_loss(sc.logits, K, asg).loss);
    };

    // analytic gradient via the same chain the trainer uses
    const auto cls = cls_loss(s0.logits, K, asg);
    const auto cb = cosine_logits_backward(s0, feats, adapted0, cls.grad, alpha);
    const auto ag = adaptor_backward(params, raw.data(), K, cb.d_emb.data());

    const double h = 1e-5;
    AdaptorParamsT<double> p = params;
    std::size_t checked = 0;
    for (std::size_t li = 0; li < p.num_layers(); ++li) {
        for (std::size_t i = 0; i < p.layers[li].weight.size(); i += 5) {
            const double keep = p.layers[li].weight[i];
            p.layers[li].weight[i] = keep + h;
            const double up = loss_of(p);
            p.layers[li].weight[i] = keep - h;
            const double dn = loss_of(p);
            p.layers[li].weight[i] = keep;
            CHECK(testutil::close_rel(ag.layers[li].weight[i], (up - dn) / (2 * h), 1e-3));
            ++checked;
        }
        for (std::size_t i = 0; i < p.layers[li].bias.size(); ++i) {
            const double keep = p.layers[li].bias[i];
            p.layers[li].bias[i] = keep + h;
            const double up = loss_of(p);
            p.layers[li].bias[i] = keep - h;
            const double dn = loss_of(p);
            p.layers[li].bias[i] = keep;
            CHECK(testutil::close_rel(ag.layers[li].bias[i], (up - dn) / (2 * h), 1e-3));
            ++checked;
        }
    }
    CHECK(checked > 20);

    // alpha and beta gradients through the same objective
    auto loss_ab = [&](double a, double b) {
        const auto sc = cosine_logits(feats, adapted0, D, a, b);
        return double(cls_loss(sc.logits, K, asg).loss);
    };
    CHECK(testutil::close_rel(cb.d_alpha,
                              (loss_ab(alpha + h, beta) - loss_ab(alpha - h, beta)) / (2 * h),
                              1e-3));
    CHECK(testutil::close_rel(cb.d_beta,
                              (loss_ab(alpha, beta + h) - loss_ab(alpha, beta - h)) / (2 * h),
                              1e-3));
}
