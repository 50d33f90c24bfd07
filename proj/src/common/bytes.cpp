#include "quictun/common/bytes.hpp"

namespace quictun {

std::string to_hex(ByteView data)
{
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (auto b : data) {
        out.push_back(kDigits[b >> 4]);
        out.push_back(kDigits[b & 0xf]);
    }
    return out;
}

Bytes from_hex(std::string_view hex)
{
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    Bytes out;
    int hi = -1;
    for (char c : hex) {
        if (c == ' ' || c == '\n' || c == '\t') continue;
        int v = nibble(c);
        if (v < 0) throw std::invalid_argument("invalid hex digit");
        if (hi < 0) {
            hi = v;
        } else {
            out.push_back(static_cast<std::uint8_t>((hi << 4) | v));
            hi = -1;
        }
    }
    if (hi >= 0) throw std::invalid_argument("odd number of hex digits");
    return out;
}

std::size_t varint_size(std::uint64_t v)
{
    if (v < (1ULL << 6)) return 1;
    if (v < (1ULL << 14)) return 2;
    if (v < (1ULL << 30)) return 4;
    if (v <= kVarintMax) return 8;
    throw std::out_of_range("varint value too large");
}

void BufferWriter::u16(std::uint16_t v)
{
    u8(static_cast<std::uint8_t>(v >> 8));
    u8(static_cast<std::uint8_t>(v));
}

void BufferWriter::u24(std::uint32_t v)
{
    u8(static_cast<std::uint8_t>(v >> 16));
    u16(static_cast<std::uint16_t>(v));
}

void BufferWriter::u32(std::uint32_t v)
{
    u16(static_cast<std::uint16_t>(v >> 16));
    u16(static_cast<std::uint16_t>(v));
}

void BufferWriter::u64(std::uint64_t v)
{
    u32(static_cast<std::uint32_t>(v >> 32));
    u32(static_cast<std::uint32_t>(v));
}

void BufferWriter::varint(std::uint64_t v)
{
    switch (varint_size(v)) {
    case 1: u8(static_cast<std::uint8_t>(v)); break;
    case 2: u16(static_cast<std::uint16_t>(v | 0x4000)); break;
    case 4: u32(static_cast<std::uint32_t>(v | 0x80000000u)); break;
    default: u64(v | 0xC000000000000000ULL); break;
    }
}

void BufferWriter::varint2(std::uint64_t v)
{
    if (v >= (1ULL << 14)) throw std::out_of_range("value does not fit a 2-byte varint");
    u16(static_cast<std::uint16_t>(v | 0x4000));
}

std::size_t BufferWriter::begin_block(std::size_t width)
{
    auto pos = size();
    zeros(width);
    return pos;
}

void BufferWriter::end_block(std::size_t pos, std::size_t width)
{
    auto len = size() - pos - width;
    if (width < 8 && len >= (1ULL << (8 * width))) throw std::length_error("block too long");
    auto& b = buf();
    for (std::size_t i = 0; i < width; ++i) {
        b[pos + i] = static_cast<std::uint8_t>(len >> (8 * (width - 1 - i)));
    }
}

std::uint8_t BufferReader::u8()
{
    need(1);
    return data_[pos_++];
}

std::uint16_t BufferReader::u16()
{
    auto hi = u8();
    return static_cast<std::uint16_t>((hi << 8) | u8());
}

std::uint32_t BufferReader::u24()
{
    std::uint32_t hi = u8();
    return (hi << 16) | u16();
}

std::uint32_t BufferReader::u32()
{
    std::uint32_t hi = u16();
    return (hi << 16) | u16();
}

std::uint64_t BufferReader::u64()
{
    std::uint64_t hi = u32();
    return (hi << 32) | u32();
}

std::uint64_t BufferReader::varint()
{
    need(1);
    auto first = data_[pos_];
    std::size_t len = std::size_t{1} << (first >> 6);
    need(len);
    std::uint64_t v = first & 0x3f;
    for (std::size_t i = 1; i < len; ++i) v = (v << 8) | data_[pos_ + i];
    pos_ += len;
    return v;
}

ByteView BufferReader::bytes(std::size_t n)
{
    need(n);
    auto v = data_.subspan(pos_, n);
    pos_ += n;
    return v;
}

ByteView BufferReader::block(std::size_t width)
{
    std::size_t len = 0;
    switch (width) {
    case 1: len = u8(); break;
    case 2: len = u16(); break;
    case 3: len = u24(); break;
    default: throw std::invalid_argument("unsupported block width");
    }
    return bytes(len);
}

}  // namespace quictun
