#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace semsearch {

// Little-endian binary writer for the params/index file formats.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path)
        : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw std::runtime_error("cannot open for write: " + path);
    }

    void u8(uint8_t v) { raw(&v, 1); }

    void u32(uint32_t v) {
        uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
        raw(b, 4);
    }

    void u64(uint64_t v) {
        uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
        raw(b, 8);
    }

    void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    void f64_array(const std::vector<double>& v) {
        for (double x : v) f64(x);
    }

    void close() {
        out_.close();
        if (!out_) throw std::runtime_error("write failed: " + path_);
    }

private:
    void raw(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw std::runtime_error("write failed: " + path_);
    }

    std::ofstream out_;
    std::string path_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path)
        : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw std::runtime_error("cannot open for read: " + path);
    }

    uint8_t u8() {
        uint8_t v;
        raw(&v, 1);
        return v;
    }

    uint32_t u32() {
        uint8_t b[4];
        raw(b, 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }

    uint64_t u64() {
        uint8_t b[8];
        raw(b, 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        uint64_t n = u64();
        if (n > (1ULL << 32)) throw std::runtime_error("corrupt string length in " + path_);
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    std::vector<double> f64_array(size_t n) {
        std::vector<double> v(n);
        for (size_t i = 0; i < n; ++i) v[i] = f64();
        return v;
    }

    void expect_eof() {
        char c;
        in_.read(&c, 1);
        if (!in_.eof()) throw std::runtime_error("trailing bytes in " + path_);
    }

private:
    void raw(void* p, size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n) {
            throw std::runtime_error("truncated file: " + path_);
        }
    }

    std::ifstream in_;
    std::string path_;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace semsearch
