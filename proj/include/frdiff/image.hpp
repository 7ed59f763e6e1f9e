#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "io.hpp"
#include "tensor.hpp"

namespace frdiff {

/// Interleaved 8-bit RGB, row-major.
struct Rgb8Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Rgb8Image() = default;
    Rgb8Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool operator==(const Rgb8Image&) const = default;
};

template <typename T = float>
Tensor3<T> to_tensor(const Rgb8Image& img) {
    Tensor3<T> t(3, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) t(c, y, x) = static_cast<T>(img.at(y, x, c) / 255.0);
    return t;
}

/// Clamps to [0,1] and rounds half-up to 8 bits.
template <typename T>
Rgb8Image to_rgb8(const Tensor3<T>& t) {
    if (t.channels() != 3) throw ShapeError(concat("to_rgb8: expected 3 channels, got ", t.shape_str()));
    Rgb8Image img(t.width(), t.height());
    for (int y = 0; y < t.height(); ++y)
        for (int x = 0; x < t.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(t(c, y, x)), 0.0, 1.0);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
            }
    return img;
}

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval 255)
// ---------------------------------------------------------------------------

inline Bytes encode_ppm(const Rgb8Image& img) {
    const std::string header = concat("P6\n", img.width, " ", img.height, "\n255\n");
    Bytes out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline Rgb8Image decode_ppm(const Bytes& data, const std::string& where) {
    std::size_t pos = 2;
    auto next_int = [&]() -> long {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(data[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        if (pos >= data.size()) throw TruncatedError(concat(where, ": truncated PPM header"));
        if (!std::isdigit(data[pos])) throw FormatError(concat(where, ": malformed PPM header"));
        long v = 0;
        while (pos < data.size() && std::isdigit(data[pos])) {
            v = v * 10 + (data[pos++] - '0');
            if (v > 1 << 20) throw FormatError(concat(where, ": PPM dimension too large"));
        }
        return v;
    };
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw FormatError(concat(where, ": only 8-bit PPM (maxval 255) is supported"));
    if (w <= 0 || h <= 0) throw FormatError(concat(where, ": empty PPM image"));
    if (pos >= data.size()) throw TruncatedError(concat(where, ": truncated PPM header"));
    ++pos;  // single whitespace before raster
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (data.size() - pos < need)
        throw TruncatedError(concat(where, ": truncated PPM data (", data.size() - pos, " of ", need, " bytes)"));
    Rgb8Image img(static_cast<int>(w), static_cast<int>(h));
    std::memcpy(img.pixels.data(), data.data() + pos, need);
    return img;
}

// ---------------------------------------------------------------------------
// PNG via libpng's simplified API
// ---------------------------------------------------------------------------

inline Bytes encode_png(const Rgb8Image& img) {
    png_image pi;
    std::memset(&pi, 0, sizeof pi);
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(concat("png encode failed: ", pi.message));
    Bytes out(size);
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
        throw IoError(concat("png encode failed: ", pi.message));
    out.resize(size);
    return out;
}

inline Rgb8Image decode_png(const Bytes& data, const std::string& where) {
    png_image pi;
    std::memset(&pi, 0, sizeof pi);
    pi.version = PNG_IMAGE_VERSION;
    auto fail = [&](const char* stage) {
        const std::string msg = pi.message;
        png_image_free(&pi);
        const bool truncated = msg.find("EOF") != std::string::npos || msg.find("runcat") != std::string::npos ||
                               msg.find("Not enough") != std::string::npos ||
                               msg.find("beyond end") != std::string::npos || msg.find("Read Error") != std::string::npos;
        if (truncated) throw TruncatedError(concat(where, ": truncated PNG (", stage, ": ", msg, ")"));
        throw FormatError(concat(where, ": invalid PNG (", stage, ": ", msg, ")"));
    };
    if (!png_image_begin_read_from_memory(&pi, data.data(), data.size())) fail("header");
    pi.format = PNG_FORMAT_RGB;
    Rgb8Image img(static_cast<int>(pi.width), static_cast<int>(pi.height));
    if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) fail("data");
    return img;
}

inline bool is_png(const Bytes& d) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return d.size() >= 8 && std::equal(sig, sig + 8, d.begin());
}

/// Decodes PNG or binary PPM, detected by magic bytes.
inline Rgb8Image load_image(const std::filesystem::path& path) {
    Bytes data = read_file(path);
    if (is_png(data)) return decode_png(data, path.string());
    if (data.size() >= 2 && data[0] == 'P' && data[1] == '6') return decode_ppm(data, path.string());
    if (data.size() < 8 && !data.empty() && data[0] == 0x89)
        throw TruncatedError(concat(path.string(), ": truncated PNG signature"));
    throw FormatError(concat(path.string(), ": unsupported image format (expected PNG or binary PPM)"));
}

/// Format chosen by extension (.png or .ppm); written atomically.
inline void save_image(const Rgb8Image& img, const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png") {
        write_file_atomic(path, encode_png(img));
    } else if (ext == ".ppm") {
        write_file_atomic(path, encode_ppm(img));
    } else {
        throw FormatError(concat(path.string(), ": unsupported output extension '", ext, "'"));
    }
}

template <typename T = float>
Tensor3<T> load_tensor(const std::filesystem::path& path) {
    return to_tensor<T>(load_image(path));
}

template <typename T>
void save_tensor(const Tensor3<T>& t, const std::filesystem::path& path) {
    save_image(to_rgb8(t), path);
}

inline bool is_image_file(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".ppm";
}

/// Image files in a directory, sorted lexicographically.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw NotFoundError(concat("directory not found: ", dir.string()));
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace frdiff
