#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "crib/errors.hpp"
#include "crib/model.hpp"
#include "crib/optim.hpp"

namespace crib {

// Checkpoint container, little-endian:
//   magic "MILW" | version u32 = 1 | optimizer kind u8 | step u64 | count u32
//   per array: name_len u16, name, dtype u8 = 1 (float32), rank u8,
//              dims u32 each, float32 payload
namespace checkpoint {

constexpr char kMagic[4] = {'M', 'I', 'L', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

namespace detail {

template <typename T>
void put(std::ofstream& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
    char buf[sizeof(T)];
    in.read(buf, sizeof(T));
    if (!in) throw InvariantError(path + ": truncated checkpoint");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

} // namespace detail

inline void save(const ModelParams& params, OptimizerKind kind, std::uint64_t step,
                 const std::string& path) {
    auto& mut = const_cast<ModelParams&>(params);
    auto table = param_table(mut);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingInputError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    detail::put<std::uint32_t>(out, kVersion);
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
    detail::put<std::uint64_t>(out, step);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
    for (const auto& np : table) {
        detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(np.name.size()));
        out.write(np.name.data(), static_cast<std::streamsize>(np.name.size()));
        detail::put<std::uint8_t>(out, kDtypeF32);
        detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(np.dims.size()));
        for (auto d : np.dims) detail::put<std::uint32_t>(out, d);
        for (double v : *np.data) detail::put<float>(out, static_cast<float>(v));
    }
    if (!out) throw InvariantError("short write: " + path);
}

struct Loaded {
    ModelParams params;
    OptimizerKind optimizer = OptimizerKind::AdamW;
    std::uint64_t step = 0;
};

inline Loaded load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("checkpoint not found: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw InvariantError(path + ": bad magic (not a checkpoint)");
    const auto version = detail::get<std::uint32_t>(in, path);
    if (version != kVersion)
        throw InvariantError(path + ": unsupported checkpoint version " + std::to_string(version));

    Loaded out;
    out.optimizer = static_cast<OptimizerKind>(detail::get<std::uint8_t>(in, path));
    out.step = detail::get<std::uint64_t>(in, path);
    const auto count = detail::get<std::uint32_t>(in, path);

    auto table = param_table(out.params);
    if (count != table.size())
        throw InvariantError(path + ": expected " + std::to_string(table.size()) + " arrays, found " +
                             std::to_string(count));
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = detail::get<std::uint16_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto dtype = detail::get<std::uint8_t>(in, path);
        if (dtype != kDtypeF32) throw InvariantError(path + ": unsupported dtype in " + name);
        const auto rank = detail::get<std::uint8_t>(in, path);
        std::vector<std::uint32_t> dims(rank);
        std::size_t total = 1;
        for (auto& d : dims) {
            d = detail::get<std::uint32_t>(in, path);
            total *= d;
        }
        const NamedParam& expected = table[e];
        if (name != expected.name)
            throw InvariantError(path + ": array #" + std::to_string(e) + " is '" + name +
                                 "', expected '" + expected.name + "'");
        if (dims != expected.dims)
            throw InvariantError(path + ": shape mismatch for '" + name + "'");
        if (total != expected.data->size())
            throw InvariantError(path + ": size mismatch for '" + name + "'");
        for (auto& v : *expected.data) v = static_cast<double>(detail::get<float>(in, path));
    }
    return out;
}

} // namespace checkpoint

} // namespace crib
