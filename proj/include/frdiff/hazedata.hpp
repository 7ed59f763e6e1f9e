#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "image.hpp"
#include "io.hpp"
#include "tensor.hpp"

namespace frdiff {

// ---------------------------------------------------------------------------
// Atmospheric scattering: I = J t + A (1 - t), t = exp(-beta d)
// ---------------------------------------------------------------------------

struct SceneSpec {
    Tensor3<float> clear;            // J, 3 x H x W in [0,1]
    Tensor3<float> depth;            // 1 x H x W, >= 0
    std::array<double, 3> airlight{1.0, 1.0, 1.0};
    double beta = 1.0;
};

template <typename T>
Tensor3<T> transmission(const Tensor3<T>& depth, double beta) {
    if (!(beta >= 0.0)) throw DataError(concat("haze: beta must be >= 0, got ", beta));
    Tensor3<T> t(1, depth.height(), depth.width());
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (!(depth[i] >= T(0))) throw DataError(concat("haze: negative depth ", depth[i], " at pixel ", i));
        t[i] = static_cast<T>(std::exp(-beta * static_cast<double>(depth[i])));
    }
    return t;
}

inline Tensor3<float> synthesize_haze(const SceneSpec& spec) {
    const Tensor3<float>& j = spec.clear;
    if (j.channels() != 3) throw ShapeError(concat("haze: clear image must have 3 channels, got ", j.shape_str()));
    if (spec.depth.channels() != 1 || spec.depth.height() != j.height() || spec.depth.width() != j.width())
        throw ShapeError(concat("haze: depth ", spec.depth.shape_str(), " does not match image ", j.shape_str()));
    for (double a : spec.airlight)
        if (!(a >= 0.0 && a <= 1.0)) throw DataError(concat("haze: airlight component ", a, " outside [0,1]"));
    const Tensor3<float> t = transmission(spec.depth, spec.beta);
    Tensor3<float> out(3, j.height(), j.width());
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double tv = t[i];
            const double v = j.channel(c)[i] * tv + spec.airlight[c] * (1.0 - tv);
            out.channel(c)[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Procedural toy scenes
// ---------------------------------------------------------------------------

struct ToyHazeRange {
    double beta_min = 0.8, beta_max = 1.6;
    double depth_min = 0.3, depth_max = 1.5;
    double airlight_min = 0.75, airlight_max = 1.0;
};

namespace detail {

inline Rng scene_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(tag)};
    return Rng(seq);
}

// Saturated-ish colour with at least one dark channel (clear scenes have a low dark channel).
inline std::array<double, 3> scene_color(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::array<double, 3> c{u(rng), u(rng), u(rng)};
    c[std::uniform_int_distribution<int>(0, 2)(rng)] = 0.15 * u(rng);
    return c;
}

} // namespace detail

/// Clear image built from a two-colour gradient, random rectangles and discs, and a
/// sinusoidal texture.
inline Tensor3<float> procedural_clear(Rng& rng, int size) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor3<float> img(3, size, size);
    const auto top = detail::scene_color(rng), bottom = detail::scene_color(rng);
    for (int y = 0; y < size; ++y) {
        const double f = size > 1 ? static_cast<double>(y) / (size - 1) : 0.0;
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<float>(top[c] * (1 - f) + bottom[c] * f);
    }
    const int shapes = 3 + static_cast<int>(u(rng) * 4);
    for (int s = 0; s < shapes; ++s) {
        const auto col = detail::scene_color(rng);
        const double cx = u(rng) * size, cy = u(rng) * size;
        const double r = (0.1 + 0.25 * u(rng)) * size;
        const bool disc = u(rng) < 0.5;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const bool inside = disc ? dx * dx + dy * dy <= r * r : std::abs(dx) <= r && std::abs(dy) <= 0.6 * r;
                if (inside)
                    for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<float>(col[c]);
            }
    }
    const double fx = 2 * std::numbers::pi * (1 + 5 * u(rng)) / size, fy = 2 * std::numbers::pi * (1 + 5 * u(rng)) / size;
    const double amp = 0.04 + 0.08 * u(rng), ph = 2 * std::numbers::pi * u(rng);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double tex = amp * std::sin(fx * x + fy * y + ph);
            for (int c = 0; c < 3; ++c) img(c, y, x) = static_cast<float>(std::clamp(img(c, y, x) + tex, 0.0, 1.0));
        }
    return img;
}

/// Smooth depth field: a few random 2-D cosines plus a vertical trend, normalized to
/// [d_min, d_max].
inline Tensor3<float> procedural_depth(Rng& rng, int size, double d_min, double d_max) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor3<double> d(1, size, size);
    for (int k = 0; k < 3; ++k) {
        const double fx = 2 * std::numbers::pi * u(rng) * 2 / size, fy = 2 * std::numbers::pi * u(rng) * 2 / size;
        const double ph = 2 * std::numbers::pi * u(rng), a = 0.5 + u(rng);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) d(0, y, x) += a * std::cos(fx * x + fy * y + ph);
    }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) d(0, y, x) += 2.0 * (size - 1 - y) / std::max(1, size - 1);
    double lo = d[0], hi = d[0];
    for (double v : d.values()) lo = std::min(lo, v), hi = std::max(hi, v);
    Tensor3<float> out(1, size, size);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double f = hi > lo ? (d[i] - lo) / (hi - lo) : 0.0;
        out[i] = static_cast<float>(d_min + f * (d_max - d_min));
    }
    return out;
}

inline SceneSpec random_scene(std::uint64_t seed, std::uint64_t index, int size, const ToyHazeRange& range = {}) {
    Rng rng = detail::scene_rng(seed, index, 0x5CE4E);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SceneSpec spec;
    spec.clear = procedural_clear(rng, size);
    spec.depth = procedural_depth(rng, size, range.depth_min, range.depth_max);
    const double base = range.airlight_min + (range.airlight_max - range.airlight_min) * u(rng);
    for (auto& a : spec.airlight) a = std::clamp(base + 0.05 * (u(rng) - 0.5), 0.0, 1.0);
    spec.beta = range.beta_min + (range.beta_max - range.beta_min) * u(rng);
    return spec;
}

// ---------------------------------------------------------------------------
// Dataset layout: <root>/hazy, <root>/clear (unpaired), <root>/reference (paired
// clears, evaluation only), <root>/manifest.csv
// ---------------------------------------------------------------------------

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<std::filesystem::path> hazy_paths;
    std::vector<std::filesystem::path> clear_paths;
    std::vector<std::filesystem::path> reference_paths;  // may be empty
    std::uint64_t seed = 0;
};

inline std::string scene_name(std::size_t i) {
    std::ostringstream os;
    os << "scene_";
    os.width(4);
    os.fill('0');
    os << i << ".png";
    return os.str();
}

/// Writes n hazy scenes (with their paired references) and n clear images drawn from a
/// disjoint set of scenes, so hazy/ and clear/ share no content.
inline DatasetIndex make_toy_dataset(const std::filesystem::path& root, std::uint64_t seed, int n_scenes, int size,
                                     const ToyHazeRange& range = {}) {
    if (n_scenes < 2) throw DataError(concat("toy dataset: need at least 2 scenes, got ", n_scenes));
    if (size < 8) throw DataError(concat("toy dataset: size must be >= 8, got ", size));
    DatasetIndex index;
    index.root = root;
    index.seed = seed;
    for (const char* sub : {"hazy", "clear", "reference"}) ensure_directory(root / sub);
    std::ostringstream manifest;
    manifest << "split,file,scene,airlight_r,airlight_g,airlight_b,beta\n";
    manifest.precision(6);
    for (int i = 0; i < n_scenes; ++i) {
        const SceneSpec hazy_scene = random_scene(seed, static_cast<std::uint64_t>(i), size, range);
        const std::string name = scene_name(static_cast<std::size_t>(i));
        save_tensor(synthesize_haze(hazy_scene), root / "hazy" / name);
        save_tensor(hazy_scene.clear, root / "reference" / name);
        const std::uint64_t clear_id = static_cast<std::uint64_t>(n_scenes + i);
        const SceneSpec clear_scene = random_scene(seed, clear_id, size, range);
        save_tensor(clear_scene.clear, root / "clear" / name);
        index.hazy_paths.push_back(root / "hazy" / name);
        index.reference_paths.push_back(root / "reference" / name);
        index.clear_paths.push_back(root / "clear" / name);
        manifest << "hazy," << name << "," << i << "," << hazy_scene.airlight[0] << "," << hazy_scene.airlight[1]
                 << "," << hazy_scene.airlight[2] << "," << hazy_scene.beta << "\n";
        manifest << "clear," << name << "," << clear_id << ",,,,\n";
    }
    write_text_atomic(root / "manifest.csv", manifest.str());
    return index;
}

/// Indexes an existing dataset directory (lexicographic order).
inline DatasetIndex index_dataset(const std::filesystem::path& root, std::uint64_t seed = 0) {
    DatasetIndex index;
    index.root = root;
    index.seed = seed;
    index.hazy_paths = list_images(root / "hazy");
    index.clear_paths = list_images(root / "clear");
    std::error_code ec;
    if (std::filesystem::is_directory(root / "reference", ec)) index.reference_paths = list_images(root / "reference");
    if (index.hazy_paths.empty()) throw DataError(concat("dataset ", root.string(), ": hazy/ has no images"));
    if (index.clear_paths.empty()) throw DataError(concat("dataset ", root.string(), ": clear/ has no images"));
    return index;
}

// ---------------------------------------------------------------------------
// Unpaired patch sampling
// ---------------------------------------------------------------------------

/// Decoded images of a dataset, kept in memory for sampling.
struct ImagePool {
    std::vector<Tensor3<float>> images;
    std::vector<std::filesystem::path> paths;

    static ImagePool load(const std::vector<std::filesystem::path>& paths) {
        ImagePool pool;
        pool.paths = paths;
        for (const auto& p : paths) pool.images.push_back(load_tensor<float>(p));
        return pool;
    }
    std::size_t size() const noexcept { return images.size(); }

    void require_patch(int patch) const {
        for (std::size_t i = 0; i < images.size(); ++i)
            if (patch > images[i].height() || patch > images[i].width())
                throw DataError(concat("patch ", patch, " larger than image ", paths[i].string(), " (",
                                       images[i].height(), "x", images[i].width(), ")"));
    }
};

struct PatchDraw {
    int y = 0, x = 0;
    bool hflip = false, vflip = false;
};

inline PatchDraw draw_patch(Rng& rng, int h, int w, int patch) {
    PatchDraw d;
    d.y = std::uniform_int_distribution<int>(0, h - patch)(rng);
    d.x = std::uniform_int_distribution<int>(0, w - patch)(rng);
    d.hflip = std::bernoulli_distribution(0.5)(rng);
    d.vflip = std::bernoulli_distribution(0.5)(rng);
    return d;
}

template <typename T>
Tensor3<T> crop_patch(const Tensor3<T>& img, int patch, const PatchDraw& d) {
    Tensor3<T> out(img.channels(), patch, patch);
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x) {
                const int sy = d.y + (d.vflip ? patch - 1 - y : y);
                const int sx = d.x + (d.hflip ? patch - 1 - x : x);
                out(c, y, x) = img(c, sy, sx);
            }
    return out;
}

template <typename T>
Tensor3<T> random_patch(const Tensor3<T>& img, int patch, Rng& rng) {
    return crop_patch(img, patch, draw_patch(rng, img.height(), img.width(), patch));
}

struct UnpairedBatch {
    std::vector<Tensor3<float>> hazy;
    std::vector<Tensor3<float>> clear;
};

/// Independent uniform crops from the two pools. `hazy_ids` pins the hazy images (an
/// epoch walks the hazy list); when empty, hazy images are drawn uniformly too. The rng
/// is the only state advanced.
inline UnpairedBatch sample_unpaired_batch(const ImagePool& hazy, const ImagePool& clear, int batch, int patch,
                                           Rng& rng, const std::vector<std::size_t>& hazy_ids = {}) {
    if (hazy.size() == 0 || clear.size() == 0) throw DataError("sample_unpaired_batch: empty image pool");
    if (batch < 1) throw DataError(concat("sample_unpaired_batch: batch must be >= 1, got ", batch));
    if (patch < 1) throw DataError(concat("sample_unpaired_batch: patch must be >= 1, got ", patch));
    hazy.require_patch(patch);
    clear.require_patch(patch);
    if (!hazy_ids.empty() && static_cast<int>(hazy_ids.size()) != batch)
        throw DataError("sample_unpaired_batch: hazy_ids size must equal batch");
    UnpairedBatch out;
    for (int b = 0; b < batch; ++b) {
        const std::size_t hi = hazy_ids.empty()
                                   ? std::uniform_int_distribution<std::size_t>(0, hazy.size() - 1)(rng)
                                   : hazy_ids[static_cast<std::size_t>(b)];
        if (hi >= hazy.size()) throw DataError(concat("sample_unpaired_batch: hazy index ", hi, " out of range"));
        out.hazy.push_back(random_patch(hazy.images[hi], patch, rng));
        const std::size_t ci = std::uniform_int_distribution<std::size_t>(0, clear.size() - 1)(rng);
        out.clear.push_back(random_patch(clear.images[ci], patch, rng));
    }
    return out;
}

} // namespace frdiff
