#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "io.hpp"
#include "tensor.hpp"

namespace frdiff {

// Layout (little-endian): "FRDF", u32 version, u32 count, then per tensor
// u16 name length, name bytes, u8 dtype, u8 ndim, u32 dims[ndim], raw data.
inline constexpr char kCheckpointMagic[4] = {'F', 'R', 'D', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, u8 = 1, u64 = 2 };

inline std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::f32: return 4;
        case DType::u8: return 1;
        case DType::u64: return 8;
    }
    return 0;
}

struct NamedTensor {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::uint32_t> dims;
    Bytes data;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
    const NamedTensor& get(const std::string& name) const {
        if (const auto* t = find(name)) return *t;
        throw CheckpointError(concat("checkpoint: missing tensor '", name, "'"));
    }
    bool has_prefix(const std::string& prefix) const {
        for (const auto& t : tensors)
            if (t.name.rfind(prefix, 0) == 0) return true;
        return false;
    }

    void put_f32(const std::string& name, const std::vector<int>& shape, const float* values) {
        NamedTensor t{name, DType::f32, {}, {}};
        for (int d : shape) t.dims.push_back(static_cast<std::uint32_t>(d));
        t.data.resize(t.count() * 4);
        for (std::size_t i = 0; i < t.count(); ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, values + i, 4);
            for (int b = 0; b < 4; ++b) t.data[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
        tensors.push_back(std::move(t));
    }
    void put_text(const std::string& name, const std::string& text) {
        NamedTensor t{name, DType::u8, {static_cast<std::uint32_t>(text.size())}, Bytes(text.begin(), text.end())};
        tensors.push_back(std::move(t));
    }
    void put_u64(const std::string& name, std::uint64_t v) {
        NamedTensor t{name, DType::u64, {1}, Bytes(8)};
        for (int b = 0; b < 8; ++b) t.data[b] = static_cast<std::uint8_t>(v >> (8 * b));
        tensors.push_back(std::move(t));
    }

    std::vector<float> get_f32(const std::string& name, const std::vector<int>& shape) const {
        const NamedTensor& t = get(name);
        std::vector<std::uint32_t> want(shape.begin(), shape.end());
        if (t.dtype != DType::f32 || t.dims != want)
            throw CheckpointError(concat("checkpoint: tensor '", name, "' has shape ", dims_str(t.dims), ", expected ",
                                         dims_str(want)));
        std::vector<float> out(t.count());
        for (std::size_t i = 0; i < out.size(); ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(t.data[i * 4 + b]) << (8 * b);
            std::memcpy(&out[i], &bits, 4);
        }
        return out;
    }
    std::string get_text(const std::string& name) const {
        const NamedTensor& t = get(name);
        if (t.dtype != DType::u8) throw CheckpointError(concat("checkpoint: '", name, "' is not a byte tensor"));
        return std::string(t.data.begin(), t.data.end());
    }
    std::uint64_t get_u64(const std::string& name) const {
        const NamedTensor& t = get(name);
        if (t.dtype != DType::u64 || t.count() != 1)
            throw CheckpointError(concat("checkpoint: '", name, "' is not a u64 scalar"));
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(t.data[b]) << (8 * b);
        return v;
    }

    static std::string dims_str(const std::vector<std::uint32_t>& d) {
        std::string s = "[";
        for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
        return s + "]";
    }
};

inline Bytes encode_checkpoint(const Checkpoint& ck) {
    Bytes out;
    auto put = [&](std::uint64_t v, int n) {
        for (int b = 0; b < n; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    };
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put(ck.version, 4);
    put(ck.tensors.size(), 4);
    for (const auto& t : ck.tensors) {
        if (t.name.size() > 0xFFFF) throw DataError(concat("checkpoint: name too long: ", t.name.substr(0, 32)));
        if (t.dims.size() > 0xFF) throw DataError(concat("checkpoint: too many dims for ", t.name));
        if (t.data.size() != t.count() * dtype_size(t.dtype))
            throw DataError(concat("checkpoint: data size mismatch for ", t.name));
        put(t.name.size(), 2);
        out.insert(out.end(), t.name.begin(), t.name.end());
        put(static_cast<std::uint8_t>(t.dtype), 1);
        put(t.dims.size(), 1);
        for (auto d : t.dims) put(d, 4);
        out.insert(out.end(), t.data.begin(), t.data.end());
    }
    return out;
}

/// Header-first parsing: magic and version are checked before any tensor storage is
/// allocated, and every length is bounds-checked against the remaining bytes.
inline Checkpoint decode_checkpoint(const Bytes& in, const std::string& where = "checkpoint") {
    std::size_t pos = 0;
    std::string current = "<header>";
    auto need = [&](std::size_t n) {
        if (in.size() - pos < n) throw TruncatedError(concat(where, ": truncated while reading ", current));
    };
    auto get = [&](int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int b = 0; b < n; ++b) v |= static_cast<std::uint64_t>(in[pos + b]) << (8 * b);
        pos += static_cast<std::size_t>(n);
        return v;
    };
    if (in.size() < 4 || std::memcmp(in.data(), kCheckpointMagic, 4) != 0)
        throw FormatError(concat(where, ": bad magic (not an FRDF checkpoint)"));
    pos = 4;
    Checkpoint ck;
    ck.version = static_cast<std::uint32_t>(get(4));
    if (ck.version != kCheckpointVersion)
        throw CheckpointError(concat(where, ": unsupported version ", ck.version, " (expected ", kCheckpointVersion, ")"));
    const std::uint64_t count = get(4);
    for (std::uint64_t i = 0; i < count; ++i) {
        current = concat("tensor #", i);
        NamedTensor t;
        const auto len = static_cast<std::size_t>(get(2));
        need(len);
        t.name.assign(reinterpret_cast<const char*>(in.data() + pos), len);
        pos += len;
        current = concat("tensor '", t.name, "'");
        const auto code = static_cast<std::uint8_t>(get(1));
        if (code > 2) throw FormatError(concat(where, ": unknown dtype ", int(code), " for ", current));
        t.dtype = static_cast<DType>(code);
        const auto ndim = static_cast<int>(get(1));
        for (int d = 0; d < ndim; ++d) t.dims.push_back(static_cast<std::uint32_t>(get(4)));
        const std::size_t remaining = in.size() - pos;
        std::size_t bytes = dtype_size(t.dtype);
        for (auto d : t.dims) {
            if (d != 0 && bytes > remaining / d) throw TruncatedError(concat(where, ": truncated while reading ", current));
            bytes *= d;
        }
        need(bytes);
        t.data.assign(in.begin() + static_cast<std::ptrdiff_t>(pos), in.begin() + static_cast<std::ptrdiff_t>(pos + bytes));
        pos += bytes;
        ck.tensors.push_back(std::move(t));
    }
    if (pos != in.size()) throw FormatError(concat(where, ": ", in.size() - pos, " trailing bytes"));
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path), path.string());
}

} // namespace frdiff
