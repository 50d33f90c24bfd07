#pragma once

// Seeded pseudorandom byte streams and streaming digests, used to verify that
// relayed data arrives byte-exact.

#include <array>
#include <memory>
#include <random>

#include "quictun/common/bytes.hpp"

namespace quictun {

// The byte stream depends only on the seed, not on how fill() calls are sized.
class PayloadGenerator {
public:
    explicit PayloadGenerator(std::uint64_t seed) : rng_(seed) {}
    void fill(MutableByteView out);
    Bytes next(std::size_t n);

private:
    std::mt19937_64 rng_;
    std::uint64_t word_ = 0;
    unsigned left_ = 0;  // unused bytes in word_
};

// Incremental SHA-256.
class StreamDigest {
public:
    StreamDigest();
    ~StreamDigest();
    StreamDigest(StreamDigest&&) noexcept;
    StreamDigest& operator=(StreamDigest&&) noexcept;

    void update(ByteView data);
    std::uint64_t bytes() const { return bytes_; }
    // Digest of everything so far; the digest can keep growing afterwards.
    std::array<std::uint8_t, 32> value() const;
    std::string hex() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::uint64_t bytes_ = 0;
};

// Digest of the first `length` bytes of PayloadGenerator(seed).
std::array<std::uint8_t, 32> payload_digest(std::uint64_t seed, std::uint64_t length);

}  // namespace quictun
