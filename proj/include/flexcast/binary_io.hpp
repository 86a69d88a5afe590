#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flexcast::io {

// Little-endian byte buffer builder.
class BinaryWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void str(std::string_view s);
    void f64s(std::span<const double> v);
    void raw(std::string_view bytes) { buf_.append(bytes); }

    const std::string& bytes() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

private:
    std::string buf_;
};

// Bounds-checked reader; running past the end raises FormatError.
class BinaryReader {
public:
    explicit BinaryReader(std::string_view data) : data_(data) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    std::vector<double> f64s();
    std::string_view raw(std::size_t n);

    bool at_end() const { return pos_ == data_.size(); }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const;

    std::string_view data_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace flexcast::io
