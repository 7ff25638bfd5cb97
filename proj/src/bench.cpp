#include "jshead/bench.hpp"

#include <algorithm>
#include <barrier>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

#include <unistd.h>

#include "jshead/quant.hpp"
#include "jshead/synth.hpp"
#include "jshead/vocab.hpp"

namespace jshead {

const char* bench_path_name(BenchPath p) {
    return p == BenchPath::Offline ? "offline" : "online";
}

const char* bench_mode_name(BenchMode m) {
    switch (m) {
        case BenchMode::Float: return "float";
        case BenchMode::Int8: return "int8";
        default: return "int16";
    }
}

void BenchConfig::validate() const {
    if (iterations < 30) throw DataError("bench iterations must be >= 30");
    if (warmup < 5) throw DataError("bench warmup must be >= 5");
    if (threads < 1 || threads > 64) throw DataError("bench threads must be in [1, 64]");
    if (levels.empty()) throw EmptyError("bench needs at least one feature level");
    if (vocab_size == 0) throw EmptyError("bench vocabulary is empty");
}

std::string machine_fingerprint() {
    char host[256] = "unknown";
    ::gethostname(host, sizeof(host) - 1);
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s/%u-cores/gcc-%d.%d", host,
                  std::thread::hardware_concurrency(), __GNUC__, __GNUC_MINOR__);
    return buf;
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::vector<SynthLevel> make_worker_levels(const BenchConfig& cfg, std::size_t dims,
                                           std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SynthLevel> levels;
    for (const auto& ls : cfg.levels) {
        SynthLevel lvl;
        lvl.features.stride = ls.stride;
        lvl.features.batch = 1;
        lvl.features.channels = dims;
        lvl.features.height = ls.height;
        lvl.features.width = ls.width;
        lvl.features.data.resize(lvl.features.size());
        for (auto& v : lvl.features.data) v = static_cast<float>(rng.gaussian());
        lvl.dfl.resize(ls.height * ls.width * 4 * kRegMax);
        for (auto& v : lvl.dfl) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        lvl.oracle.assign(ls.height * ls.width, -1);
        levels.push_back(std::move(lvl));
    }
    return levels;
}

}  // namespace

BenchResult run_bench(const BenchConfig& cfg, const VocabularyPack& pack,
                      const AdaptorParams* adaptor, const EmbeddingMatrix* raw_embeddings) {
    cfg.validate();
    pack.validate();
    if (pack.classes() != cfg.vocab_size)
        throw ShapeError("pack K " + std::to_string(pack.classes()) + " != bench K " +
                         std::to_string(cfg.vocab_size));
    AdaptorParams identity;
    identity.dim = pack.dims;
    if (cfg.path == BenchPath::Online) {
        if (!adaptor) adaptor = &identity;
        if (!raw_embeddings)
            throw DataError("online bench path needs the raw embedding matrix");
        if (raw_embeddings->rows != pack.classes() || raw_embeddings->dims != pack.dims)
            throw ShapeError("raw embeddings do not match the pack");
    }

    const DetectParams det{};
    QuantizedKernel qk;
    if (cfg.mode != BenchMode::Float)
        qk = quantize_kernel(pack, cfg.mode == BenchMode::Int8 ? QuantMode::Int8
                                                               : QuantMode::Int16);

    const std::size_t nthreads = std::size_t(cfg.threads);
    std::vector<std::vector<double>> samples(nthreads);
    std::chrono::steady_clock::time_point wall_start;
    std::barrier sync(nthreads + 1, [&]() noexcept {
        wall_start = std::chrono::steady_clock::now();
    });

    const std::uint64_t calls_before = adaptor_forward_calls();

    auto worker = [&](int wid) {
        auto levels = make_worker_levels(cfg, pack.dims, mix(cfg.seed, std::uint64_t(wid)));
        SynthScene scene;
        scene.levels = std::move(levels);
        scene.image_size = cfg.image_size;

        auto run_once = [&]() {
            if (cfg.path == BenchPath::Online) {
                // per-frame vocabulary rebuild, as if the prompts changed
                const EmbeddingMatrix adapted = forward(*adaptor, *raw_embeddings);
                const VocabularyPack fresh =
                    reparameterize(adapted, pack.logit_scale, pack.logit_bias);
                if (cfg.mode == BenchMode::Float) {
                    volatile std::size_t sink = run_detection(fresh, scene, det).size();
                    (void)sink;
                } else {
                    const QuantizedKernel fresh_q = quantize_kernel(
                        fresh, cfg.mode == BenchMode::Int8 ? QuantMode::Int8 : QuantMode::Int16);
                    volatile std::size_t sink =
                        run_detection_quantized(fresh_q, scene, det).size();
                    (void)sink;
                }
            } else if (cfg.mode == BenchMode::Float) {
                volatile std::size_t sink = run_detection(pack, scene, det).size();
                (void)sink;
            } else {
                volatile std::size_t sink = run_detection_quantized(qk, scene, det).size();
                (void)sink;
            }
        };

        for (std::size_t i = 0; i < cfg.warmup; ++i) run_once();
        sync.arrive_and_wait();
        auto& out = samples[std::size_t(wid)];
        out.reserve(cfg.iterations);
        for (std::size_t i = 0; i < cfg.iterations; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            run_once();
            const auto t1 = std::chrono::steady_clock::now();
            out.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        }
    };

    std::vector<std::thread> threads;
    try {
        for (std::size_t w = 0; w < nthreads; ++w) threads.emplace_back(worker, int(w));
    } catch (const std::system_error& e) {
        for (auto& t : threads) t.join();
        throw ResourceError(std::string("failed to spawn bench worker: ") + e.what());
    }
    sync.arrive_and_wait();
    for (auto& t : threads) t.join();
    const auto wall_end = std::chrono::steady_clock::now();
    const std::uint64_t calls_after = adaptor_forward_calls();

    std::vector<double> all;
    all.reserve(std::size_t(nthreads) * cfg.iterations);
    for (const auto& s : samples) all.insert(all.end(), s.begin(), s.end());
    std::sort(all.begin(), all.end());
    const auto pct = [&](double q) {
        const std::size_t rank = std::size_t(std::ceil(q * double(all.size())));
        return all[std::min(all.size() - 1, rank > 0 ? rank - 1 : 0)];
    };
    double mean = 0;
    for (double v : all) mean += v;
    mean /= double(all.size());

    BenchResult res;
    res.path = cfg.path;
    res.vocab_size = cfg.vocab_size;
    res.threads = nthreads;
    res.mode = cfg.mode;
    res.iterations = cfg.iterations;
    res.mean_us = mean;
    res.p50_us = pct(0.5);
    res.p90_us = pct(0.9);
    res.fps = 1e6 / mean;
    const double wall_s = std::chrono::duration<double>(wall_end - wall_start).count();
    res.aggregate_fps = double(nthreads) * double(cfg.iterations) / wall_s;
    res.adaptor_calls_timed = calls_after - calls_before;
    res.fingerprint = machine_fingerprint();
    return res;
}

std::string bench_report_csv(const std::vector<BenchResult>& results) {
    std::string out =
        "path,k,threads,mode,iterations,mean_us,p50_us,p90_us,fps,aggregate_fps,fingerprint\n";
    char buf[512];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%d,%s,%zu,%.3f,%.3f,%.3f,%.3f,%.3f,%s\n",
                      bench_path_name(r.path), r.vocab_size, r.threads, bench_mode_name(r.mode),
                      r.iterations, r.mean_us, r.p50_us, r.p90_us, r.fps, r.aggregate_fps,
                      r.fingerprint.c_str());
        out += buf;
    }
    return out;
}

std::string bench_report_table(const std::vector<BenchResult>& results) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%-8s %6s %7s %-6s %10s %10s %10s %10s %12s\n", "path", "K",
                  "threads", "mode", "mean_us", "p50_us", "p90_us", "fps", "agg_fps");
    std::string out = buf;
    for (const auto& r : results) {
        std::snprintf(buf, sizeof(buf), "%-8s %6zu %7d %-6s %10.1f %10.1f %10.1f %10.2f %12.2f\n",
                      bench_path_name(r.path), r.vocab_size, r.threads, bench_mode_name(r.mode),
                      r.mean_us, r.p50_us, r.p90_us, r.fps, r.aggregate_fps);
        out += buf;
    }
    return out;
}

}  // namespace jshead
