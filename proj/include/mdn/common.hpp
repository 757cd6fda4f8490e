#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdn {

// Error hierarchy. Shape/validation problems and numeric blow-ups are kept
// distinct so callers can react differently (abort a training step vs reject
// a config).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    format_into(os, rest...);
}
}  // namespace detail

template <typename... Parts>
std::string strcat_msg(const Parts&... parts) {
    std::ostringstream os;
    detail::format_into(os, parts...);
    return os.str();
}

template <typename E = Error, typename... Parts>
[[noreturn]] void fail(const Parts&... parts) {
    throw E(strcat_msg(parts...));
}

template <typename E = Error, typename... Parts>
void check(bool cond, const Parts&... parts) {
    if (!cond) fail<E>(parts...);
}

using Rng = std::mt19937_64;

// Derives an independent stream from a base seed. Streams are decorrelated by
// the splitmix64 finalizer so seed and seed+1 do not produce related runs.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace mdn
