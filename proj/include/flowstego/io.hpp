#pragma once

// Binary latent serialization. Little-endian layout:
//   magic "FSTG" | u16 version | u8 flags (bit0: shape present) |
//   u64 dim | [u32 rows, u32 cols] | dim x IEEE-754 binary64
// Round trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "core.hpp"

namespace flowstego {

namespace detail {

constexpr char kLatentMagic[4] = {'F', 'S', 'T', 'G'};
constexpr std::uint16_t kLatentVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
    std::uint8_t buf[sizeof(T)];
    std::uint64_t u = 0;
    std::memcpy(&u, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<std::uint8_t>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    std::uint8_t buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw FormatError("truncated latent file");
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        u |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    T v;
    std::memcpy(&v, &u, sizeof(T));
    return v;
}

inline void write_f64(std::ostream& os, double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    write_le<std::uint64_t>(os, u);
}

inline double read_f64(std::istream& is) {
    std::uint64_t u = read_le<std::uint64_t>(is);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
}

}  // namespace detail

inline void write_latent(std::ostream& os, const LatentVector& v) {
    if (!v.all_finite())
        throw FormatError("refusing to serialize non-finite latent");
    os.write(detail::kLatentMagic, 4);
    detail::write_le<std::uint16_t>(os, detail::kLatentVersion);
    std::uint8_t flags = v.shape_hint ? 1 : 0;
    detail::write_le<std::uint8_t>(os, flags);
    detail::write_le<std::uint64_t>(os, v.dim());
    if (v.shape_hint) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.shape_hint->first));
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.shape_hint->second));
    }
    for (double d : v.data) detail::write_f64(os, d);
}

inline void write_latent(const std::string& path, const LatentVector& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    write_latent(os, v);
    if (!os) throw FormatError("write failed: " + path);
}

inline LatentVector read_latent(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kLatentMagic, 4) != 0)
        throw FormatError("bad latent magic");
    auto version = detail::read_le<std::uint16_t>(is);
    if (version != detail::kLatentVersion)
        throw FormatError("unsupported latent format version");
    auto flags = detail::read_le<std::uint8_t>(is);
    auto dim = detail::read_le<std::uint64_t>(is);
    if (dim == 0) throw FormatError("latent dim must be >= 1");
    LatentVector v;
    if (flags & 1) {
        auto rows = detail::read_le<std::uint32_t>(is);
        auto cols = detail::read_le<std::uint32_t>(is);
        if (static_cast<std::uint64_t>(rows) * cols != dim)
            throw FormatError("shape_hint inconsistent with dim");
        v.shape_hint = std::make_pair<std::size_t, std::size_t>(rows, cols);
    }
    v.data.resize(dim);
    for (std::uint64_t i = 0; i < dim; ++i) {
        v.data[i] = detail::read_f64(is);
        if (!std::isfinite(v.data[i]))
            throw FormatError("non-finite scalar in latent file");
    }
    return v;
}

inline LatentVector read_latent(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for read: " + path);
    return read_latent(is);
}

// Optional trajectory dump: u32 record count, then per record a u32 step
// index followed by an embedded latent record.
inline void write_trajectory(const std::string& path, const TrajectoryRecord& traj) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(traj.states.size()));
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(k));
        write_latent(os, traj.states[k]);
    }
}

}  // namespace flowstego
