#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace quictun {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
using MutableByteView = std::span<std::uint8_t>;

inline ByteView as_bytes(std::string_view s)
{
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline Bytes to_bytes(std::string_view s)
{
    auto v = as_bytes(s);
    return {v.begin(), v.end()};
}

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

// Thrown by BufferReader when input is truncated or a value is out of range.
class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Length in bytes of the QUIC variable-length encoding of `v`.
std::size_t varint_size(std::uint64_t v);
inline constexpr std::uint64_t kVarintMax = (1ULL << 62) - 1;

class BufferWriter {
public:
    BufferWriter() = default;
    explicit BufferWriter(Bytes& out) : out_(&out) {}

    void u8(std::uint8_t v) { buf().push_back(v); }
    void u16(std::uint16_t v);
    void u24(std::uint32_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void varint(std::uint64_t v);
    // Two-byte varint regardless of magnitude (used for patchable length fields).
    void varint2(std::uint64_t v);
    void bytes(ByteView v) { buf().insert(buf().end(), v.begin(), v.end()); }
    void zeros(std::size_t n) { buf().insert(buf().end(), n, 0); }

    // Length-prefixed block: reserves `width` bytes, returns the position to patch.
    std::size_t begin_block(std::size_t width);
    void end_block(std::size_t pos, std::size_t width);

    std::size_t size() const { return out_ ? out_->size() : own_.size(); }
    Bytes& data() { return buf(); }
    Bytes take() { return std::move(buf()); }

private:
    Bytes& buf() { return out_ ? *out_ : own_; }
    Bytes own_;
    Bytes* out_ = nullptr;
};

class BufferReader {
public:
    explicit BufferReader(ByteView data) : data_(data) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u24();
    std::uint32_t u32();
    std::uint64_t u64();
    std::uint64_t varint();
    ByteView bytes(std::size_t n);
    // Reads a block whose length prefix is `width` bytes wide (1, 2 or 3).
    ByteView block(std::size_t width);
    void skip(std::size_t n) { (void)bytes(n); }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }
    bool empty() const { return remaining() == 0; }
    ByteView rest() const { return data_.subspan(pos_); }

private:
    void need(std::size_t n) const
    {
        if (remaining() < n) throw DecodeError("truncated input");
    }
    ByteView data_;
    std::size_t pos_ = 0;
};

}  // namespace quictun
