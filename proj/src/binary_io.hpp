#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apt/errors.hpp"

namespace apt::detail {

// Little-endian encoder. Integers are written byte by byte so the output
// does not depend on host byte order.
class ByteWriter {
public:
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

    template <typename U>
    void uint(U value) {
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
        }
    }

    void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

template <typename TruncationError>
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    std::string bytes(std::size_t n, std::string_view what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    template <typename U>
    U uint(std::string_view what) {
        need(sizeof(U), what);
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            value |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(U);
        return value;
    }

    float f32(std::string_view what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
    double f64(std::string_view what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }

private:
    void need(std::size_t n, std::string_view what) {
        if (remaining() < n) {
            throw TruncationError("unexpected end of data reading " + std::string(what) +
                                  " at offset " + std::to_string(pos_) + " (need " +
                                  std::to_string(n) + " bytes, have " +
                                  std::to_string(remaining()) + ")");
        }
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to `<path>.tmp` then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace apt::detail
