#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jshead/adaptor.hpp"
#include "jshead/boxes.hpp"
#include "jshead/embedding.hpp"
#include "jshead/head.hpp"
#include "jshead/pipeline.hpp"

namespace jshead {

enum class BenchPath { Offline, Online };
enum class BenchMode { Float, Int8, Int16 };

const char* bench_path_name(BenchPath p);
const char* bench_mode_name(BenchMode m);

struct BenchConfig {
    BenchPath path = BenchPath::Offline;
    std::size_t vocab_size = 80;
    int threads = 1;
    BenchMode mode = BenchMode::Float;
    std::vector<LevelSpec> levels = {{8, 20, 20}, {16, 10, 10}, {32, 5, 5}};
    int image_size = 160;
    std::size_t iterations = 30;  // timed samples per worker
    std::size_t warmup = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct BenchResult {
    BenchPath path = BenchPath::Offline;
    std::size_t vocab_size = 0;
    int threads = 1;
    BenchMode mode = BenchMode::Float;
    std::size_t iterations = 0;  // per worker
    double mean_us = 0;
    double p50_us = 0;
    double p90_us = 0;
    double fps = 0;            // 1e6 / mean_us
    double aggregate_fps = 0;  // threads * iterations / wall seconds
    std::uint64_t adaptor_calls_timed = 0;  // adaptor forwards inside the timed region
    std::string fingerprint;
};

// Times the full head pipeline (classify + DFL decode + NMS) per frame.
// The offline path scores a prebuilt pack; the online path rebuilds the
// vocabulary every frame (adaptor forward + re-parameterization, plus
// quantization in the integer modes). Workers own their feature buffers and
// share the immutable pack; warmup iterations are excluded from every sample.
BenchResult run_bench(const BenchConfig& cfg, const VocabularyPack& pack,
                      const AdaptorParams* adaptor = nullptr,
                      const EmbeddingMatrix* raw_embeddings = nullptr);

std::string bench_report_csv(const std::vector<BenchResult>& results);
std::string bench_report_table(const std::vector<BenchResult>& results);

std::string machine_fingerprint();

}  // namespace jshead
