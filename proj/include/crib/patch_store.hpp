#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include "crib/errors.hpp"

namespace crib {

// Random-access container for patch payloads, little-endian:
//   magic "PSTR" | version u32 = 1 | entry count u64
//   index: per entry key_len u16, key bytes, payload offset u64, payload len u64
//   payload blobs (offsets are absolute file positions)
namespace patch_store {

constexpr char kMagic[4] = {'P', 'S', 'T', 'R'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

} // namespace detail

class Writer {
public:
    void add(const std::string& key, std::vector<std::uint8_t> payload) {
        if (keys_seen_.count(key)) throw InvariantError("patch store: duplicate key '" + key + "'");
        keys_seen_.insert({key, true});
        entries_.emplace_back(key, std::move(payload));
    }

    std::size_t size() const { return entries_.size(); }

    // Assembles header + index + payloads and writes the file in one shot.
    void seal(const std::string& path) const {
        std::vector<std::uint8_t> header;
        header.insert(header.end(), kMagic, kMagic + 4);
        detail::put_le<std::uint32_t>(header, kVersion);
        detail::put_le<std::uint64_t>(header, entries_.size());
        std::size_t index_size = 0;
        for (const auto& [key, payload] : entries_)
            index_size += 2 + key.size() + 8 + 8;

        std::uint64_t offset = header.size() + index_size;
        for (const auto& [key, payload] : entries_) {
            detail::put_le<std::uint16_t>(header, static_cast<std::uint16_t>(key.size()));
            header.insert(header.end(), key.begin(), key.end());
            detail::put_le<std::uint64_t>(header, offset);
            detail::put_le<std::uint64_t>(header, payload.size());
            offset += payload.size();
        }

        std::FILE* f = std::fopen(path.c_str(), "wb");
        if (!f) throw MissingInputError("cannot write " + path);
        bool ok = std::fwrite(header.data(), 1, header.size(), f) == header.size();
        for (const auto& [key, payload] : entries_) {
            if (!ok) break;
            if (!payload.empty())
                ok = std::fwrite(payload.data(), 1, payload.size(), f) == payload.size();
        }
        std::fclose(f);
        if (!ok) throw InvariantError("short write: " + path);
    }

private:
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> entries_;
    std::map<std::string, bool> keys_seen_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path) {
        fd_ = ::open(path.c_str(), O_RDONLY);
        if (fd_ < 0) throw MissingInputError("cannot open patch store: " + path);
        std::uint8_t head[16];
        read_at(head, sizeof(head), 0);
        if (std::memcmp(head, kMagic, 4) != 0)
            throw InvariantError(path + ": bad magic (not a patch store)");
        const auto version = detail::get_le<std::uint32_t>(head + 4);
        if (version != kVersion)
            throw InvariantError(path + ": unsupported version " + std::to_string(version));
        const auto count = detail::get_le<std::uint64_t>(head + 8);

        std::uint64_t pos = 16;
        for (std::uint64_t e = 0; e < count; ++e) {
            std::uint8_t klen_buf[2];
            read_at(klen_buf, 2, pos);
            pos += 2;
            const auto klen = detail::get_le<std::uint16_t>(klen_buf);
            std::string key(klen, '\0');
            read_at(reinterpret_cast<std::uint8_t*>(key.data()), klen, pos);
            pos += klen;
            std::uint8_t loc[16];
            read_at(loc, 16, pos);
            pos += 16;
            Entry ent{detail::get_le<std::uint64_t>(loc), detail::get_le<std::uint64_t>(loc + 8)};
            index_.emplace(std::move(key), ent);
        }
    }

    ~Reader() {
        if (fd_ >= 0) ::close(fd_);
    }

    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;
    Reader(Reader&& other) noexcept : path_(std::move(other.path_)), fd_(other.fd_), index_(std::move(other.index_)) {
        other.fd_ = -1;
    }

    std::size_t size() const { return index_.size(); }
    bool contains(const std::string& key) const { return index_.count(key) > 0; }

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        out.reserve(index_.size());
        for (const auto& [k, v] : index_) out.push_back(k);
        return out;
    }

    // Thread-safe: uses pread, no shared file offset.
    std::vector<std::uint8_t> read(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end())
            throw InvariantError(path_ + ": missing key '" + key + "'");
        std::vector<std::uint8_t> out(it->second.length);
        if (!out.empty()) read_at(out.data(), out.size(), it->second.offset);
        return out;
    }

private:
    struct Entry {
        std::uint64_t offset;
        std::uint64_t length;
    };

    void read_at(std::uint8_t* dst, std::size_t n, std::uint64_t offset) const {
        std::size_t got = 0;
        while (got < n) {
            const ssize_t r = ::pread(fd_, dst + got, n - got, static_cast<off_t>(offset + got));
            if (r <= 0) throw InvariantError(path_ + ": truncated patch store");
            got += static_cast<std::size_t>(r);
        }
    }

    std::string path_;
    int fd_ = -1;
    std::map<std::string, Entry> index_;
};

// Rewrites the union of several stores into one file, first input first.
inline void merge(const std::vector<std::string>& inputs, const std::string& output) {
    Writer w;
    for (const auto& in : inputs) {
        Reader r(in);
        for (const auto& key : r.keys()) w.add(key, r.read(key));
    }
    w.seal(output);
}

} // namespace patch_store

} // namespace crib
