#pragma once

// Versioned checkpoint archive. Layout: magic "MDNCKPT1", then per parameter
// (in registry order): u64 name length, utf-8 name, u64 rank, u64 extents,
// row-major f32 little-endian values.

#include <cstring>
#include <filesystem>
#include <fstream>

#include "mdn/registry.hpp"

namespace mdn {

namespace detail {

inline void write_u64(std::ostream& out, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

inline uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    check<IoError>(in.good(), "checkpoint: truncated integer field");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
}

inline void write_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 4);
}

inline float read_f32(std::istream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    check<IoError>(in.good(), "checkpoint: truncated float payload");
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(buf[i]) << (8 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "MDNCKPT1";

template <typename S>
void save_checkpoint(const ParamRegistry<S>& registry, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    check<IoError>(out.good(), "cannot open checkpoint for writing: ", path.string());
    out.write(kCheckpointMagic, 8);
    for (const auto& e : registry.entries()) {
        detail::write_u64(out, e.name.size());
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_u64(out, e.tensor.rank());
        for (int64_t ext : e.tensor.shape()) detail::write_u64(out, static_cast<uint64_t>(ext));
        for (S v : e.tensor.data()) detail::write_f32(out, static_cast<float>(v));
    }
    check<IoError>(out.good(), "checkpoint write failed: ", path.string());
}

// Loads into an existing registry; every parameter must be present with a
// matching shape and no extra records may remain (a class-count mismatch
// therefore surfaces as a shape error on the classifier head).
template <typename S>
void load_checkpoint(ParamRegistry<S>& registry, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    check<IoError>(in.good(), "cannot open checkpoint: ", path.string());
    char magic[8];
    in.read(magic, 8);
    check<IoError>(in.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
                   "not a checkpoint file (bad magic): ", path.string());
    size_t loaded = 0;
    while (true) {
        if (in.peek() == std::char_traits<char>::eof()) break;
        const uint64_t name_len = detail::read_u64(in);
        check<IoError>(name_len < 4096, "checkpoint: implausible name length ", name_len);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        check<IoError>(in.good(), "checkpoint: truncated name");
        const uint64_t rank = detail::read_u64(in);
        check<IoError>(rank <= 8, "checkpoint: implausible rank ", rank);
        Shape shape(rank);
        for (uint64_t i = 0; i < rank; ++i)
            shape[i] = static_cast<int64_t>(detail::read_u64(in));
        auto* entry = const_cast<ParamEntry<S>*>(registry.find(name));
        check<IoError>(entry != nullptr, "checkpoint: unknown parameter '", name,
                       "' (model/checkpoint mismatch)");
        check<IoError>(entry->tensor.shape() == shape, "checkpoint: shape mismatch for '", name,
                       "': model ", shape_str(entry->tensor.shape()), " vs file ",
                       shape_str(shape));
        for (int64_t i = 0; i < entry->tensor.numel(); ++i)
            entry->tensor.data()[i] = static_cast<S>(detail::read_f32(in));
        ++loaded;
    }
    check<IoError>(loaded == registry.entries().size(), "checkpoint: ", loaded,
                   " parameters in file, model has ", registry.entries().size());
}

}  // namespace mdn
