#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>
#include <unistd.h>

#include <frdiff/tensor.hpp>

namespace frdiff::test {

template <typename T = double>
Tensor3<T> random_tensor(int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor3<T> t(c, h, w);
    fill_uniform(t, rng, lo, hi);
    return t;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("frdiff_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

} // namespace frdiff::test
