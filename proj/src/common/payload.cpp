#include "quictun/common/payload.hpp"

#include <cstring>
#include <stdexcept>

#include <openssl/evp.h>

namespace quictun {

void PayloadGenerator::fill(MutableByteView out)
{
    std::size_t i = 0;
    while (i < out.size() && left_ > 0) {
        out[i++] = static_cast<std::uint8_t>(word_);
        word_ >>= 8;
        --left_;
    }
    while (out.size() - i >= 8) {
        auto w = rng_();
        std::memcpy(out.data() + i, &w, 8);  // little-endian hosts only matter for cross-host replay
        i += 8;
    }
    if (i < out.size()) {
        word_ = rng_();
        left_ = 8;
        while (i < out.size()) {
            out[i++] = static_cast<std::uint8_t>(word_);
            word_ >>= 8;
            --left_;
        }
    }
}

Bytes PayloadGenerator::next(std::size_t n)
{
    Bytes b(n);
    fill(b);
    return b;
}

struct StreamDigest::Impl {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    ~Impl() { EVP_MD_CTX_free(ctx); }
};

StreamDigest::StreamDigest() : impl_(std::make_unique<Impl>())
{
    if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 init failed");
    }
}

StreamDigest::~StreamDigest() = default;
StreamDigest::StreamDigest(StreamDigest&&) noexcept = default;
StreamDigest& StreamDigest::operator=(StreamDigest&&) noexcept = default;

void StreamDigest::update(ByteView data)
{
    EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
    bytes_ += data.size();
}

std::array<std::uint8_t, 32> StreamDigest::value() const
{
    std::array<std::uint8_t, 32> out{};
    EVP_MD_CTX* copy = EVP_MD_CTX_new();
    EVP_MD_CTX_copy_ex(copy, impl_->ctx);
    unsigned len = 0;
    EVP_DigestFinal_ex(copy, out.data(), &len);
    EVP_MD_CTX_free(copy);
    return out;
}

std::string StreamDigest::hex() const
{
    auto v = value();
    return to_hex(v);
}

std::array<std::uint8_t, 32> payload_digest(std::uint64_t seed, std::uint64_t length)
{
    PayloadGenerator gen(seed);
    StreamDigest d;
    Bytes chunk(64 * 1024);
    while (length > 0) {
        auto n = static_cast<std::size_t>(std::min<std::uint64_t>(length, chunk.size()));
        gen.fill(MutableByteView(chunk.data(), n));
        d.update(ByteView(chunk.data(), n));
        length -= n;
    }
    return d.value();
}

}  // namespace quictun
