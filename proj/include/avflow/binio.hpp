#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "avflow/errors.hpp"
#include "avflow/tensor.hpp"

namespace avflow::binio {

// All integers and floats are little-endian on disk. The writers assume a
// little-endian host (checked once at startup of anything that serializes).
inline void require_little_endian() {
    const std::uint32_t probe = 1;
    char b;
    std::memcpy(&b, &probe, 1);
    if (b != 1) throw IoError("binio: big-endian hosts are not supported");
}

class Writer {
  public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
        require_little_endian();
        if (!out_) throw IoError("binio: cannot open for writing: " + path.string());
    }

    void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void magic(const char (&m)[9]) { bytes(m, 8); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    void f64_array(const double* p, std::size_t n) { bytes(p, n * 8); }

    void tensor(const Tensor& t) {
        u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t i = 0; i < t.rank(); ++i) u32(static_cast<std::uint32_t>(t.dim(i)));
        f64_array(t.data(), t.numel());
    }

    void close() {
        out_.flush();
        if (!out_) throw IoError("binio: write failed");
        out_.close();
    }

  private:
    std::ofstream out_;
};

class Reader {
  public:
    explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path.string()) {
        require_little_endian();
        if (!in_) throw IoError("binio: cannot open for reading: " + path_);
    }

    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw IoError("binio: truncated file: " + path_);
    }

    void expect_magic(const char (&m)[9]) {
        char got[8];
        bytes(got, 8);
        if (std::memcmp(got, m, 8) != 0) throw IoError("binio: bad magic in " + path_);
    }

    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }

    Tensor tensor(std::size_t max_numel = (1u << 28)) {
        const std::uint32_t rank = u32();
        if (rank > 8) throw IoError("binio: implausible tensor rank in " + path_);
        Shape shape(rank);
        for (auto& d : shape) d = u32();
        const std::size_t n = shape_numel(shape);
        if (n > max_numel) throw IoError("binio: implausible tensor size in " + path_);
        std::vector<double> data(n);
        bytes(data.data(), n * 8);
        return Tensor(std::move(shape), std::move(data));
    }

    void expect_eof() {
        char c;
        in_.read(&c, 1);
        if (!in_.eof()) throw IoError("binio: trailing bytes in " + path_);
    }

  private:
    std::ifstream in_;
    std::string path_;
};

// FNV-1a over a file's bytes; used for manifest checksums.
inline std::string fnv1a_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("fnv1a: cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return std::string(hex);
}

}  // namespace avflow::binio
