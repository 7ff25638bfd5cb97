#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "jshead/common.hpp"
#include "jshead/embedding.hpp"

namespace testutil {

// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("jshead_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline jshead::EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dims,
                                             std::uint64_t seed, bool with_labels = false) {
    jshead::Rng rng(seed);
    jshead::EmbeddingMatrix m;
    m.rows = rows;
    m.dims = dims;
    m.data.resize(rows * dims);
    for (auto& v : m.data) v = static_cast<float>(rng.gaussian());
    if (with_labels)
        for (std::size_t r = 0; r < rows; ++r) m.labels.push_back("label_" + std::to_string(r));
    return m;
}

inline bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

// |a-b| <= tol * max(1, |a|, |b|): relative with an absolute floor, the usual
// gradient-check comparison
inline bool close_rel(double a, double b, double tol) {
    const double scale = std::max({1.0, std::abs(a), std::abs(b)});
    return std::abs(a - b) <= tol * scale;
}

}  // namespace testutil
