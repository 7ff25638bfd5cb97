#include "jshead/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

namespace jshead {

namespace {

constexpr double kBackgroundCosineCap = 0.3;
constexpr std::size_t kEmbeddingDrawBudget = 100000;
constexpr std::size_t kBackgroundDrawBudget = 50000;  // per cell

std::vector<float> random_unit(Rng& rng, std::size_t dim) {
    std::vector<float> v(dim);
    while (true) {
        double sq = 0.0;
        for (auto& x : v) {
            x = static_cast<float>(rng.gaussian());
            sq += double(x) * double(x);
        }
        if (sq > 1e-12) {
            const double inv = 1.0 / std::sqrt(sq);
            for (auto& x : v) x = static_cast<float>(double(x) * inv);
            return v;
        }
    }
}

double cos_unit(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += double(a[i]) * double(b[i]);
    return acc;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

void reflect(const std::vector<float>& v, std::vector<float>& x) {
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += double(v[i]) * double(x[i]);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = static_cast<float>(double(x[i]) - 2.0 * dot * double(v[i]));
}

}  // namespace

void SynthSpec::validate() const {
    if (num_classes < 2) throw DataError("synth spec needs at least 2 classes");
    if (dim == 0) throw DataError("synth dim must be >= 1");
    if (sigma < 0) throw DataError("sigma must be >= 0");
    if (objects_min < 1 || objects_max < objects_min)
        throw DataError("invalid objects-per-scene range");
    grid.validate();
}

std::vector<float> FeatureGenerator::apply(const float* e) const {
    std::vector<float> x(e, e + dim);
    if (map == GenMap::Linear) return x;
    for (const auto& v : reflectors) reflect(v, x);
    double sq = 0.0;
    for (auto& v : x) {
        v = v > 0.0f ? v : 0.0f;
        sq += double(v) * double(v);
    }
    if (sq <= 1e-18) throw DataError("nonlinear generator collapsed an embedding to zero");
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& v : x) v = static_cast<float>(double(v) * inv);
    return x;
}

FeatureGenerator build_generator(const SynthSpec& spec) {
    FeatureGenerator g;
    g.map = spec.map;
    g.dim = spec.dim;
    if (spec.map == GenMap::Nonlinear) {
        Rng rng(mix_seed(spec.seed, 0x526f74ull));  // generator-map stream
        g.reflectors.reserve(spec.dim);
        for (std::size_t i = 0; i < spec.dim; ++i)
            g.reflectors.push_back(random_unit(rng, spec.dim));
    }
    return g;
}

EmbeddingMatrix gen_class_embeddings(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    EmbeddingMatrix m;
    m.dims = spec.dim;
    std::size_t draws = 0;
    std::vector<std::vector<float>> accepted;
    while (accepted.size() < spec.num_classes) {
        if (draws >= kEmbeddingDrawBudget)
            throw CapacityError("could not place " + std::to_string(spec.num_classes) +
                                " class embeddings with pairwise cosine <= 0.5 in dim " +
                                std::to_string(spec.dim) + " within " +
                                std::to_string(kEmbeddingDrawBudget) + " draws");
        ++draws;
        auto v = random_unit(rng, spec.dim);
        bool ok = true;
        for (const auto& u : accepted)
            if (std::abs(cos_unit(v.data(), u.data(), spec.dim)) > 0.5) {
                ok = false;
                break;
            }
        if (ok) accepted.push_back(std::move(v));
    }
    m.rows = spec.num_classes;
    m.data.reserve(m.rows * m.dims);
    for (const auto& v : accepted) m.data.insert(m.data.end(), v.begin(), v.end());
    for (std::size_t k = 0; k < m.rows; ++k) m.labels.push_back("class_" + std::to_string(k));
    return m;
}

namespace {

// Bracketing-bin logits whose softmax expectation reproduces `d` (≈ exactly).
void encode_dfl(float* logits, double d) {
    for (int b = 0; b < kRegMax; ++b) logits[b] = -40.0f;
    const int lo = int(std::floor(d));
    const double wr = d - double(lo);
    logits[lo] = static_cast<float>(std::log(std::max(1.0 - wr, 1e-12)));
    if (wr > 0.0 && lo + 1 < kRegMax)
        logits[lo + 1] = static_cast<float>(std::log(std::max(wr, 1e-12)));
}

bool has_inside_center(const Box& b, int stride) {
    const double s = stride;
    bool x_ok = false, y_ok = false;
    for (double x = 0.5 * s; x < b.x2 && !x_ok; x += s) x_ok = x > b.x1 && x < b.x2;
    for (double y = 0.5 * s; y < b.y2 && !y_ok; y += s) y_ok = y > b.y1 && y < b.y2;
    return x_ok && y_ok;
}

bool disjoint(const Box& a, const Box& b, float margin) {
    return a.x2 + margin < b.x1 || b.x2 + margin < a.x1 || a.y2 + margin < b.y1 ||
           b.y2 + margin < a.y1;
}

}  // namespace

SynthScene gen_scene(const SynthSpec& spec, const EmbeddingMatrix& class_embeddings,
                     std::uint64_t scene_seed) {
    spec.validate();
    class_embeddings.validate();
    if (class_embeddings.rows != spec.num_classes || class_embeddings.dims != spec.dim)
        throw ShapeError("class embedding shape does not match synth spec");

    const FeatureGenerator gen = build_generator(spec);
    std::vector<std::vector<float>> protos(spec.num_classes);
    for (std::size_t k = 0; k < spec.num_classes; ++k)
        protos[k] = gen.apply(class_embeddings.row(k));

    Rng rng(scene_seed);
    SynthScene scene;
    scene.seed = scene_seed;
    scene.image_size = spec.grid.image_size;
    for (std::size_t li = 0; li < spec.grid.levels.size(); ++li) {
        const auto& ls = spec.grid.levels[li];
        SynthLevel lvl;
        lvl.features.level = int(li);
        lvl.features.stride = ls.stride;
        lvl.features.batch = 1;
        lvl.features.channels = spec.dim;
        lvl.features.height = ls.height;
        lvl.features.width = ls.width;
        lvl.features.data.assign(lvl.features.size(), 0.0f);
        lvl.dfl.assign(ls.height * ls.width * 4 * kRegMax, 0.0f);
        lvl.oracle.assign(ls.height * ls.width, -1);
        scene.levels.push_back(std::move(lvl));
    }

    // object placement: per object pick class, level and a disjoint box that
    // keeps every interior distance within the DFL range
    struct Placed {
        Box box;
        int cls;
        std::size_t level;
    };
    std::vector<Placed> placed;
    const int n_objects = spec.objects_min + int(rng.index(std::size_t(
                                                spec.objects_max - spec.objects_min + 1)));
    const float image = float(spec.grid.image_size);
    for (int o = 0; o < n_objects; ++o) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            const std::size_t cls = rng.index(spec.num_classes);
            const std::size_t li = rng.index(spec.grid.levels.size());
            const float s = float(spec.grid.levels[li].stride);
            const float cap = std::min(12.0f * s, image);
            const float w = float(rng.uniform(1.6 * s, cap));
            const float h = float(rng.uniform(1.6 * s, cap));
            if (w >= image || h >= image) continue;
            Box b;
            b.x1 = float(rng.uniform(0.0, image - w));
            b.y1 = float(rng.uniform(0.0, image - h));
            b.x2 = b.x1 + w;
            b.y2 = b.y1 + h;
            bool ok = has_inside_center(b, spec.grid.levels[li].stride);
            for (const auto& p : placed)
                if (!disjoint(b, p.box, 2.0f)) ok = false;
            if (!ok) continue;
            placed.push_back({b, int(cls), li});
            break;
        }
    }
    for (const auto& p : placed) scene.gts.push_back({p.box, p.cls});

    // background everywhere, re-randomized until far from every prototype
    for (auto& lvl : scene.levels) {
        const std::size_t plane = lvl.features.height * lvl.features.width;
        for (std::size_t cell = 0; cell < plane; ++cell) {
            std::vector<float> v;
            std::size_t tries = 0;
            while (true) {
                if (++tries > kBackgroundDrawBudget)
                    throw CapacityError("background rejection exhausted: class count too "
                                        "high for background cosine cap");
                v = random_unit(rng, spec.dim);
                double worst = -1.0;
                for (const auto& proto : protos)
                    worst = std::max(worst, cos_unit(v.data(), proto.data(), spec.dim));
                if (worst < kBackgroundCosineCap) break;
            }
            for (std::size_t c = 0; c < spec.dim; ++c)
                lvl.features.data[c * plane + cell] = v[c];
        }
    }

    // foreground cells: prototype + noise, oracle class, exact DFL targets
    for (const auto& p : placed) {
        auto& lvl = scene.levels[p.level];
        const float s = float(lvl.features.stride);
        const std::size_t plane = lvl.features.height * lvl.features.width;
        for (std::size_t i = 0; i < lvl.features.height; ++i) {
            for (std::size_t j = 0; j < lvl.features.width; ++j) {
                const float cx = (float(j) + 0.5f) * s;
                const float cy = (float(i) + 0.5f) * s;
                if (!(cx > p.box.x1 && cx < p.box.x2 && cy > p.box.y1 && cy < p.box.y2))
                    continue;
                const std::size_t cell = i * lvl.features.width + j;
                const auto& proto = protos[std::size_t(p.cls)];
                for (std::size_t c = 0; c < spec.dim; ++c)
                    lvl.features.data[c * plane + cell] = static_cast<float>(
                        double(proto[c]) + double(spec.sigma) * rng.gaussian());
                lvl.oracle[cell] = p.cls;
                float* dfl = lvl.dfl.data() + cell * 4 * kRegMax;
                encode_dfl(dfl + 0 * kRegMax, (cx - p.box.x1) / s);
                encode_dfl(dfl + 1 * kRegMax, (cy - p.box.y1) / s);
                encode_dfl(dfl + 2 * kRegMax, (p.box.x2 - cx) / s);
                encode_dfl(dfl + 3 * kRegMax, (p.box.y2 - cy) / s);
            }
        }
    }
    return scene;
}

SynthCorpus gen_corpus(const SynthSpec& spec, std::size_t num_scenes) {
    SynthCorpus corpus;
    corpus.spec = spec;
    corpus.class_embeddings = gen_class_embeddings(spec);
    corpus.scenes.reserve(num_scenes);
    for (std::size_t i = 0; i < num_scenes; ++i)
        corpus.scenes.push_back(
            gen_scene(spec, corpus.class_embeddings, mix_seed(spec.seed, 0x5363 + i)));
    return corpus;
}

// ---------------------------------------------------------------------------
// Corpus serialization
// ---------------------------------------------------------------------------

std::string encode_scene(const SynthScene& s) {
    ByteWriter w;
    w.magic("DSFM");
    w.u32(kDsfmVersion);
    w.u32(std::uint32_t(s.image_size));
    w.u32(std::uint32_t(s.levels.size()));
    w.u32(std::uint32_t(kRegMax));
    for (const auto& lvl : s.levels) {
        w.u32(std::uint32_t(lvl.features.stride));
        w.u32(std::uint32_t(lvl.features.batch));
        w.u32(std::uint32_t(lvl.features.channels));
        w.u32(std::uint32_t(lvl.features.height));
        w.u32(std::uint32_t(lvl.features.width));
        for (float v : lvl.features.data) w.f32(v);
        for (float v : lvl.dfl) w.f32(v);
        for (std::int32_t v : lvl.oracle) w.u32(std::bit_cast<std::uint32_t>(v));
    }
    return w.buf;
}

SynthScene decode_scene(const std::string& bytes) {
    ByteReader r(bytes);
    r.expect_magic("DSFM", "feature blob");
    const std::uint32_t version = r.u32();
    if (version != kDsfmVersion)
        throw FormatError("unsupported DSFM version " + std::to_string(version));
    SynthScene s;
    s.image_size = int(r.u32());
    const std::uint32_t num_levels = r.u32();
    const std::uint32_t reg_max = r.u32();
    if (reg_max != kRegMax)
        throw FormatError("feature blob reg_max " + std::to_string(reg_max) + " != " +
                          std::to_string(kRegMax));
    for (std::uint32_t li = 0; li < num_levels; ++li) {
        SynthLevel lvl;
        lvl.features.level = int(li);
        lvl.features.stride = int(r.u32());
        lvl.features.batch = r.u32();
        lvl.features.channels = r.u32();
        lvl.features.height = r.u32();
        lvl.features.width = r.u32();
        if (lvl.features.batch != 1) throw FormatError("feature blob batch must be 1");
        lvl.features.data.resize(lvl.features.size());
        for (auto& v : lvl.features.data) v = r.f32();
        lvl.dfl.resize(lvl.features.cells() * 4 * kRegMax);
        for (auto& v : lvl.dfl) v = r.f32();
        lvl.oracle.resize(lvl.features.cells());
        for (auto& v : lvl.oracle) v = std::bit_cast<std::int32_t>(r.u32());
        lvl.features.validate();
        s.levels.push_back(std::move(lvl));
    }
    if (r.remaining() != 0) throw LengthError("trailing bytes in feature blob");
    return s;
}

namespace {

nlohmann::json box_to_json(const Box& b) {
    return nlohmann::json{b.x1, b.y1, b.x2, b.y2};
}

Box box_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw FormatError("box must be a 4-element array");
    return Box{j[0].get<float>(), j[1].get<float>(), j[2].get<float>(), j[3].get<float>()};
}

}  // namespace

void save_corpus(const SynthCorpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    write_embeddings(corpus.class_embeddings, (fs::path(dir) / "classes.dsem").string());

    nlohmann::json man;
    man["classes"] = corpus.spec.num_classes;
    man["dim"] = corpus.spec.dim;
    man["map"] = corpus.spec.map == GenMap::Linear ? "linear" : "nonlinear";
    man["sigma"] = corpus.spec.sigma;
    man["seed"] = corpus.spec.seed;
    man["image_size"] = corpus.spec.grid.image_size;
    man["objects"] = {corpus.spec.objects_min, corpus.spec.objects_max};
    man["classes_file"] = "classes.dsem";
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& l : corpus.spec.grid.levels)
        levels.push_back({{"stride", l.stride}, {"height", l.height}, {"width", l.width}});
    man["levels"] = levels;

    nlohmann::json scenes = nlohmann::json::array();
    for (std::size_t i = 0; i < corpus.scenes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05zu.dsfm", i);
        write_file_bytes((fs::path(dir) / name).string(), encode_scene(corpus.scenes[i]));
        nlohmann::json gts = nlohmann::json::array();
        for (const auto& g : corpus.scenes[i].gts)
            gts.push_back({{"box", box_to_json(g.box)}, {"class_index", g.class_index}});
        scenes.push_back(
            {{"file", name}, {"seed", corpus.scenes[i].seed}, {"gts", std::move(gts)}});
    }
    man["scenes"] = std::move(scenes);
    write_file_bytes((fs::path(dir) / "manifest.json").string(), man.dump(2) + "\n");
}

SynthCorpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    nlohmann::json man;
    try {
        man = nlohmann::json::parse(read_file_bytes((fs::path(dir) / "manifest.json").string()));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad corpus manifest: ") + e.what());
    }
    SynthCorpus corpus;
    try {
        corpus.spec.num_classes = man.at("classes").get<std::size_t>();
        corpus.spec.dim = man.at("dim").get<std::size_t>();
        corpus.spec.map =
            man.at("map").get<std::string>() == "nonlinear" ? GenMap::Nonlinear : GenMap::Linear;
        corpus.spec.sigma = man.at("sigma").get<float>();
        corpus.spec.seed = man.at("seed").get<std::uint64_t>();
        corpus.spec.grid.image_size = man.at("image_size").get<int>();
        corpus.spec.objects_min = man.at("objects")[0].get<int>();
        corpus.spec.objects_max = man.at("objects")[1].get<int>();
        for (const auto& l : man.at("levels"))
            corpus.spec.grid.levels.push_back({l.at("stride").get<int>(),
                                               l.at("height").get<std::size_t>(),
                                               l.at("width").get<std::size_t>()});
        corpus.class_embeddings = read_embeddings(
            (fs::path(dir) / man.at("classes_file").get<std::string>()).string());
        for (const auto& sj : man.at("scenes")) {
            SynthScene s = decode_scene(
                read_file_bytes((fs::path(dir) / sj.at("file").get<std::string>()).string()));
            s.seed = sj.at("seed").get<std::uint64_t>();
            for (const auto& gj : sj.at("gts"))
                s.gts.push_back(
                    {box_from_json(gj.at("box")), gj.at("class_index").get<int>()});
            corpus.scenes.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad corpus manifest: ") + e.what());
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

double scene_cell_accuracy(const SynthScene& scene, const std::vector<ScoreMap>& level_scores) {
    if (level_scores.size() != scene.levels.size())
        throw ShapeError("score map count != scene level count");
    std::size_t total = 0, correct = 0;
    for (std::size_t li = 0; li < scene.levels.size(); ++li) {
        const auto& lvl = scene.levels[li];
        const auto& s = level_scores[li];
        if (s.height != lvl.features.height || s.width != lvl.features.width)
            throw ShapeError("score map shape != feature map shape");
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) {
                const std::int32_t oracle = lvl.oracle[y * s.width + x];
                if (oracle < 0) continue;
                std::size_t best = 0;
                float best_v = s.at(0, 0, y, x);
                for (std::size_t k = 1; k < s.classes; ++k) {
                    const float v = s.at(0, k, y, x);
                    if (v > best_v) {
                        best_v = v;
                        best = k;
                    }
                }
                ++total;
                if (std::int32_t(best) == oracle) ++correct;
            }
    }
    return total == 0 ? 1.0 : double(correct) / double(total);
}

EvalMetrics evaluate(const std::vector<SynthScene>& scenes,
                     const std::vector<std::vector<Detection>>& dets_per_scene,
                     const std::vector<std::vector<ScoreMap>>* scores_per_scene,
                     std::size_t num_classes) {
    if (dets_per_scene.size() != scenes.size())
        throw ShapeError("detection list count != scene count");
    if (scores_per_scene && scores_per_scene->size() != scenes.size())
        throw ShapeError("score list count != scene count");

    if (num_classes == 0) {
        for (const auto& s : scenes)
            for (const auto& g : s.gts)
                num_classes = std::max(num_classes, std::size_t(g.class_index) + 1);
        for (const auto& dets : dets_per_scene)
            for (const auto& d : dets)
                num_classes = std::max(num_classes, std::size_t(d.class_index) + 1);
    }

    EvalMetrics m;
    m.per_class.assign(num_classes, {});
    std::size_t cell_total = 0, cell_correct = 0;

    for (std::size_t si = 0; si < scenes.size(); ++si) {
        const auto& scene = scenes[si];
        // per class greedy matching at IoU 0.5
        for (std::size_t k = 0; k < num_classes; ++k) {
            std::vector<std::size_t> det_idx;
            for (std::size_t i = 0; i < dets_per_scene[si].size(); ++i)
                if (std::size_t(dets_per_scene[si][i].class_index) == k) det_idx.push_back(i);
            std::stable_sort(det_idx.begin(), det_idx.end(), [&](std::size_t a, std::size_t b) {
                return dets_per_scene[si][a].score > dets_per_scene[si][b].score;
            });
            std::vector<std::size_t> gt_idx;
            for (std::size_t i = 0; i < scene.gts.size(); ++i)
                if (std::size_t(scene.gts[i].class_index) == k) gt_idx.push_back(i);
            std::vector<bool> matched(gt_idx.size(), false);
            for (std::size_t di : det_idx) {
                double best = 0.5;
                std::ptrdiff_t best_g = -1;
                for (std::size_t gi = 0; gi < gt_idx.size(); ++gi) {
                    if (matched[gi]) continue;
                    const double v = iou(dets_per_scene[si][di].box, scene.gts[gt_idx[gi]].box);
                    if (v >= best && (best_g < 0 || v > best)) {
                        best = v;
                        best_g = std::ptrdiff_t(gi);
                    }
                }
                if (best_g >= 0) {
                    matched[std::size_t(best_g)] = true;
                    ++m.per_class[k].tp;
                } else {
                    ++m.per_class[k].fp;
                }
            }
            for (bool was : matched)
                if (!was) ++m.per_class[k].fn;
        }
        if (scores_per_scene) {
            for (std::size_t li = 0; li < scene.levels.size(); ++li) {
                const auto& lvl = scene.levels[li];
                const auto& s = (*scores_per_scene)[si][li];
                for (std::size_t y = 0; y < s.height; ++y)
                    for (std::size_t x = 0; x < s.width; ++x) {
                        const std::int32_t oracle = lvl.oracle[y * s.width + x];
                        if (oracle < 0) continue;
                        std::size_t best = 0;
                        float best_v = s.at(0, 0, y, x);
                        for (std::size_t k = 1; k < s.classes; ++k)
                            if (s.at(0, k, y, x) > best_v) {
                                best_v = s.at(0, k, y, x);
                                best = k;
                            }
                        ++cell_total;
                        if (std::int32_t(best) == oracle) ++cell_correct;
                    }
            }
        }
    }

    std::size_t tp = 0, fp = 0, fn = 0;
    for (auto& c : m.per_class) {
        c.precision = (c.tp + c.fp) == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fp);
        c.recall = (c.tp + c.fn) == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fn);
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
    }
    m.precision = (tp + fp) == 0 ? 1.0 : double(tp) / double(tp + fp);
    m.recall = (tp + fn) == 0 ? 1.0 : double(tp) / double(tp + fn);
    if (scores_per_scene) {
        m.cells_scored = cell_total;
        m.cell_accuracy = cell_total == 0 ? 1.0 : double(cell_correct) / double(cell_total);
    }
    return m;
}

std::string metrics_to_json(const EvalMetrics& m, const std::vector<std::string>& labels) {
    nlohmann::json j;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    if (m.cell_accuracy >= 0) {
        j["cell_accuracy"] = m.cell_accuracy;
        j["cells_scored"] = m.cells_scored;
    }
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t k = 0; k < m.per_class.size(); ++k) {
        nlohmann::json c;
        c["label"] = k < labels.size() ? labels[k] : "class_" + std::to_string(k);
        c["tp"] = m.per_class[k].tp;
        c["fp"] = m.per_class[k].fp;
        c["fn"] = m.per_class[k].fn;
        c["precision"] = m.per_class[k].precision;
        c["recall"] = m.per_class[k].recall;
        per.push_back(std::move(c));
    }
    j["per_class"] = std::move(per);
    return j.dump(2) + "\n";
}

}  // namespace jshead
