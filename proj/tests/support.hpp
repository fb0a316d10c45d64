#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "apt/apt_block.hpp"
#include "apt/random.hpp"

namespace apt::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = scale * rng.normal();
    }
    return m;
}

// Every tensor random, including the zero-initialized projections.
inline APTParams random_params(std::uint32_t dim, std::uint32_t heads, std::uint32_t ff_dim, std::uint64_t seed,
                               double scale = 0.5) {
    APTParams p = init_params(dim, heads, ff_dim, seed);
    Rng rng(derive_seed(seed, 99));
    p.weights.for_each([&](std::string_view name, auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            const double x = rng.normal();
            t.data()[i] = name.ends_with("gamma") ? 1.0 + 0.2 * x : scale * x / std::sqrt(double(t.rows()));
        }
    });
    return p;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("apt_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace apt::test
