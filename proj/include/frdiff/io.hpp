#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "error.hpp"

namespace frdiff {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) throw NotFoundError(concat("file not found: ", path.string()));
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(concat("cannot open for reading: ", path.string()));
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(concat("read failed: ", path.string()));
    return data;
}

/// Writes to a sibling temp file and renames it into place, so readers never see a
/// partial file.
inline void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
    const std::filesystem::path tmp = path.string() + ".partial";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(concat("cannot open for writing: ", tmp.string()));
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError(concat("write failed: ", tmp.string()));
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError(concat("cannot move into place: ", path.string()));
    }
}

inline void write_file_atomic(const std::filesystem::path& path, const Bytes& data) {
    write_file_atomic(path, data.data(), data.size());
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, text.data(), text.size());
}

inline void ensure_directory(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw IoError(concat("cannot create directory: ", dir.string()));
}

} // namespace frdiff
