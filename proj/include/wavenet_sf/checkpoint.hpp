#pragma once

// Binary checkpoint format, all integers little-endian:
//
//   "WNSF" | u32 version (1) | u32 entry count
//   per entry: u32 name length | name bytes | u8 dtype (0 = f32) | u8 ndim | u32 dims[ndim] | f32 payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace wnsf {

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& b) : buf_(b) {}

    std::size_t offset() const { return pos_; }

    void need(std::size_t n, const char* what) const {
        if (buf_.size() - pos_ < n) {
            throw CheckpointError("checkpoint truncated at offset " + std::to_string(pos_) + " while reading " + what +
                                  " (need " + std::to_string(n) + " bytes, have " + std::to_string(buf_.size() - pos_) +
                                  ")");
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return buf_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    const std::vector<std::uint8_t>& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
    std::vector<std::uint8_t> out{'W', 'N', 'S', 'F'};
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(ck.entries.size()));
    for (const auto& e : ck.entries) {
        if (e.shape.size() > 255) throw CheckpointError("checkpoint: too many dims for " + e.name);
        if (shape_numel(e.shape) != e.values.size()) throw CheckpointError("checkpoint: shape/value mismatch for " + e.name);
        detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        out.push_back(0);
        out.push_back(static_cast<std::uint8_t>(e.shape.size()));
        for (std::size_t d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : e.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    detail::ByteReader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "WNSF", 4) != 0) throw CheckpointError("bad magic at offset 0");
    r.bytes(4, "magic");
    const std::uint32_t version = r.u32("version");
    if (version != 1) {
        throw CheckpointError("unsupported version " + std::to_string(version) + " at offset 4 (expected 1)");
    }
    const std::uint32_t count = r.u32("entry count");
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const std::uint32_t len = r.u32("name length");
        e.name = r.bytes(len, "name");
        const std::size_t dtype_at = r.offset();
        if (r.u8("dtype") != 0) {
            throw CheckpointError("unsupported dtype at offset " + std::to_string(dtype_at) + " for " + e.name);
        }
        const std::uint8_t ndim = r.u8("ndim");
        for (std::uint8_t d = 0; d < ndim; ++d) e.shape.push_back(r.u32("dims"));
        const std::size_t n = shape_numel(e.shape);
        r.need(n * 4, "payload");
        e.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) e.values[k] = std::bit_cast<float>(r.u32("payload"));
        ck.entries.push_back(std::move(e));
    }
    if (r.offset() != bytes.size()) {
        throw CheckpointError("trailing bytes after last entry at offset " + std::to_string(r.offset()));
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    const auto bytes = encode_checkpoint(ck);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Snapshot of every tensor a model visits, in visit order.
template <class M>
Checkpoint capture_state(M& model) {
    Checkpoint ck;
    model.visit([&](const std::string& name, auto& t, bool) {
        ck.entries.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
    });
    return ck;
}

/// Writes checkpoint values into a model built with the same configuration.
template <class M>
void restore_state(M& model, const Checkpoint& ck) {
    std::size_t used = 0;
    model.visit([&](const std::string& name, auto& t, bool) {
        const CheckpointEntry* e = ck.find(name);
        if (!e) throw CheckpointError("checkpoint has no entry for " + name);
        if (e->shape != t.shape()) {
            throw CheckpointError("checkpoint entry " + name + " has shape " + shape_str(e->shape) + ", model expects " +
                                  shape_str(t.shape()));
        }
        auto dst = t.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<std::remove_reference_t<decltype(dst[i])>>(e->values[i]);
        ++used;
    });
    if (used != ck.entries.size()) {
        throw CheckpointError("checkpoint has " + std::to_string(ck.entries.size()) + " entries, model uses " +
                              std::to_string(used));
    }
}

}  // namespace wnsf
