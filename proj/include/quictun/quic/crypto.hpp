#pragma once

// Cryptographic primitives used by the handshake and packet protection.
// Everything is fixed to the TLS_AES_128_GCM_SHA256 suite.

#include <array>
#include <memory>
#include <string_view>

#include <openssl/evp.h>

#include "quictun/common/bytes.hpp"

namespace quictun::quic {

inline constexpr std::size_t kHashLen = 32;
inline constexpr std::size_t kAeadKeyLen = 16;
inline constexpr std::size_t kAeadIvLen = 12;
inline constexpr std::size_t kAeadTagLen = 16;

struct EvpCipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
struct EvpPkeyDeleter {
    void operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }
};
using EvpPkeyPtr = std::unique_ptr<EVP_PKEY, EvpPkeyDeleter>;

void random_bytes(MutableByteView out);

Bytes sha256(ByteView data);
Bytes hmac_sha256(ByteView key, ByteView data);
Bytes hkdf_extract(ByteView salt, ByteView ikm);
Bytes hkdf_expand(ByteView prk, ByteView info, std::size_t length);
// HKDF-Expand-Label from TLS 1.3; `label` is given without the "tls13 " prefix.
Bytes hkdf_expand_label(ByteView secret, std::string_view label, ByteView context, std::size_t length);

// Running SHA-256 over the handshake transcript; digest() does not finalize.
class Transcript {
public:
    Transcript();
    Transcript(const Transcript&) = delete;
    Transcript& operator=(const Transcript&) = delete;
    void update(ByteView data);
    Bytes digest() const;

private:
    std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx_;
};

class Aead {
public:
    Aead(ByteView key, ByteView iv);
    Aead(Aead&&) noexcept = default;
    Aead& operator=(Aead&&) noexcept = default;

    // Encrypts `plaintext` in place and appends the tag at plaintext.end().
    // `out` must have room for plaintext.size() + kAeadTagLen bytes.
    void seal(std::uint64_t packet_number, ByteView aad, MutableByteView inout_with_tag) const;
    // Decrypts in place; returns false on authentication failure.
    bool open(std::uint64_t packet_number, ByteView aad, MutableByteView inout_with_tag) const;

private:
    std::array<std::uint8_t, kAeadIvLen> nonce(std::uint64_t pn) const;
    std::unique_ptr<EVP_CIPHER_CTX, EvpCipherCtxDeleter> enc_;
    std::unique_ptr<EVP_CIPHER_CTX, EvpCipherCtxDeleter> dec_;
    std::array<std::uint8_t, kAeadIvLen> iv_{};
};

class HeaderProtection {
public:
    explicit HeaderProtection(ByteView key);
    HeaderProtection(HeaderProtection&&) noexcept = default;
    HeaderProtection& operator=(HeaderProtection&&) noexcept = default;

    std::array<std::uint8_t, 5> mask(ByteView sample16) const;

private:
    std::unique_ptr<EVP_CIPHER_CTX, EvpCipherCtxDeleter> ctx_;
};

// Keys for one direction of one encryption level.
struct PacketKeys {
    Bytes secret;
    Aead aead;
    HeaderProtection hp;

    static PacketKeys from_secret(ByteView secret);
};

// Secret and AEAD for the next key phase. Header protection keys are not updated.
struct NextGeneration {
    Bytes secret;
    Aead aead;
};
NextGeneration next_key_generation(ByteView secret);

struct InitialSecrets {
    Bytes client;
    Bytes server;
};
InitialSecrets derive_initial_secrets(ByteView client_dcid);

class X25519KeyShare {
public:
    X25519KeyShare();
    const Bytes& public_key() const { return public_; }
    // Throws on malformed peer key or an all-zero result.
    Bytes derive(ByteView peer_public) const;

private:
    EvpPkeyPtr key_;
    Bytes public_;
};

}  // namespace quictun::quic
