#include "quictun/quic/crypto.hpp"

#include <algorithm>
#include <stdexcept>

#include <openssl/hmac.h>
#include <openssl/rand.h>

namespace quictun::quic {

namespace {

[[noreturn]] void fail(const char* what)
{
    throw std::runtime_error(std::string("crypto failure: ") + what);
}

// QUIC v1 initial salt (RFC 9001 5.2).
constexpr std::array<std::uint8_t, 20> kInitialSalt = {0x38, 0x76, 0x2c, 0xf7, 0xf5, 0x59, 0x34,
                                                       0xb3, 0x4d, 0x17, 0x9a, 0xe6, 0xa4, 0xc8,
                                                       0x0c, 0xad, 0xcc, 0xbb, 0x7f, 0x0a};

}  // namespace

void random_bytes(MutableByteView out)
{
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) fail("RAND_bytes");
}

Bytes sha256(ByteView data)
{
    Bytes out(kHashLen);
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1) fail("EVP_Digest");
    return out;
}

Bytes hmac_sha256(ByteView key, ByteView data)
{
    Bytes out(kHashLen);
    unsigned int len = 0;
    if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(), out.data(), &len)) {
        fail("HMAC");
    }
    return out;
}

Bytes hkdf_extract(ByteView salt, ByteView ikm)
{
    Bytes zero_salt(kHashLen, 0);
    return hmac_sha256(salt.empty() ? ByteView(zero_salt) : salt, ikm);
}

Bytes hkdf_expand(ByteView prk, ByteView info, std::size_t length)
{
    if (length > 255 * kHashLen) throw std::invalid_argument("hkdf_expand length too large");
    Bytes out;
    out.reserve(length);
    Bytes t;
    for (std::uint8_t counter = 1; out.size() < length; ++counter) {
        Bytes input = t;
        input.insert(input.end(), info.begin(), info.end());
        input.push_back(counter);
        t = hmac_sha256(prk, input);
        auto take = std::min(t.size(), length - out.size());
        out.insert(out.end(), t.begin(), t.begin() + static_cast<std::ptrdiff_t>(take));
    }
    return out;
}

Bytes hkdf_expand_label(ByteView secret, std::string_view label, ByteView context, std::size_t length)
{
    BufferWriter info;
    info.u16(static_cast<std::uint16_t>(length));
    std::string full = "tls13 ";
    full += label;
    info.u8(static_cast<std::uint8_t>(full.size()));
    info.bytes(as_bytes(full));
    info.u8(static_cast<std::uint8_t>(context.size()));
    info.bytes(context);
    return hkdf_expand(secret, info.data(), length);
}

Transcript::Transcript() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free)
{
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) fail("EVP_DigestInit_ex");
}

void Transcript::update(ByteView data)
{
    if (EVP_DigestUpdate(ctx_.get(), data.data(), data.size()) != 1) fail("EVP_DigestUpdate");
}

Bytes Transcript::digest() const
{
    std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> copy(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!copy || EVP_MD_CTX_copy_ex(copy.get(), ctx_.get()) != 1) fail("EVP_MD_CTX_copy_ex");
    Bytes out(kHashLen);
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(copy.get(), out.data(), &len) != 1) fail("EVP_DigestFinal_ex");
    return out;
}

Aead::Aead(ByteView key, ByteView iv) : enc_(EVP_CIPHER_CTX_new()), dec_(EVP_CIPHER_CTX_new())
{
    if (key.size() != kAeadKeyLen || iv.size() != kAeadIvLen) throw std::invalid_argument("bad AEAD key/iv size");
    std::copy(iv.begin(), iv.end(), iv_.begin());
    if (!enc_ || !dec_) fail("EVP_CIPHER_CTX_new");
    if (EVP_EncryptInit_ex(enc_.get(), EVP_aes_128_gcm(), nullptr, key.data(), nullptr) != 1) fail("EncryptInit");
    if (EVP_DecryptInit_ex(dec_.get(), EVP_aes_128_gcm(), nullptr, key.data(), nullptr) != 1) fail("DecryptInit");
}

std::array<std::uint8_t, kAeadIvLen> Aead::nonce(std::uint64_t pn) const
{
    auto n = iv_;
    for (int i = 0; i < 8; ++i) n[kAeadIvLen - 1 - i] ^= static_cast<std::uint8_t>(pn >> (8 * i));
    return n;
}

void Aead::seal(std::uint64_t packet_number, ByteView aad, MutableByteView inout) const
{
    if (inout.size() < kAeadTagLen) throw std::invalid_argument("seal buffer too small");
    auto n = nonce(packet_number);
    auto* ctx = enc_.get();
    int len = 0;
    auto plain_len = static_cast<int>(inout.size() - kAeadTagLen);
    if (EVP_EncryptInit_ex(ctx, nullptr, nullptr, nullptr, n.data()) != 1) fail("EncryptInit nonce");
    if (EVP_EncryptUpdate(ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) fail("aad");
    if (EVP_EncryptUpdate(ctx, inout.data(), &len, inout.data(), plain_len) != 1) fail("EncryptUpdate");
    if (EVP_EncryptFinal_ex(ctx, inout.data() + len, &len) != 1) fail("EncryptFinal");
    if (EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_GET_TAG, kAeadTagLen, inout.data() + plain_len) != 1) fail("tag");
}

bool Aead::open(std::uint64_t packet_number, ByteView aad, MutableByteView inout) const
{
    if (inout.size() < kAeadTagLen) return false;
    auto n = nonce(packet_number);
    auto* ctx = dec_.get();
    int len = 0;
    auto cipher_len = static_cast<int>(inout.size() - kAeadTagLen);
    if (EVP_DecryptInit_ex(ctx, nullptr, nullptr, nullptr, n.data()) != 1) return false;
    if (EVP_DecryptUpdate(ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) return false;
    if (EVP_DecryptUpdate(ctx, inout.data(), &len, inout.data(), cipher_len) != 1) return false;
    if (EVP_CIPHER_CTX_ctrl(ctx, EVP_CTRL_GCM_SET_TAG, kAeadTagLen, inout.data() + cipher_len) != 1) return false;
    return EVP_DecryptFinal_ex(ctx, inout.data() + len, &len) == 1;
}

HeaderProtection::HeaderProtection(ByteView key) : ctx_(EVP_CIPHER_CTX_new())
{
    if (key.size() != kAeadKeyLen) throw std::invalid_argument("bad header protection key size");
    if (!ctx_ || EVP_EncryptInit_ex(ctx_.get(), EVP_aes_128_ecb(), nullptr, key.data(), nullptr) != 1) {
        fail("hp init");
    }
    EVP_CIPHER_CTX_set_padding(ctx_.get(), 0);
}

std::array<std::uint8_t, 5> HeaderProtection::mask(ByteView sample) const
{
    if (sample.size() < 16) throw std::invalid_argument("header protection sample too short");
    std::array<std::uint8_t, 32> out{};
    int len = 0;
    if (EVP_EncryptUpdate(ctx_.get(), out.data(), &len, sample.data(), 16) != 1) fail("hp mask");
    std::array<std::uint8_t, 5> m{};
    std::copy_n(out.begin(), 5, m.begin());
    return m;
}

PacketKeys PacketKeys::from_secret(ByteView secret)
{
    auto key = hkdf_expand_label(secret, "quic key", {}, kAeadKeyLen);
    auto iv = hkdf_expand_label(secret, "quic iv", {}, kAeadIvLen);
    auto hp = hkdf_expand_label(secret, "quic hp", {}, kAeadKeyLen);
    return PacketKeys{Bytes(secret.begin(), secret.end()), Aead(key, iv), HeaderProtection(hp)};
}

NextGeneration next_key_generation(ByteView secret)
{
    auto next_secret = hkdf_expand_label(secret, "quic ku", {}, kHashLen);
    auto key = hkdf_expand_label(next_secret, "quic key", {}, kAeadKeyLen);
    auto iv = hkdf_expand_label(next_secret, "quic iv", {}, kAeadIvLen);
    return NextGeneration{next_secret, Aead(key, iv)};
}

InitialSecrets derive_initial_secrets(ByteView client_dcid)
{
    auto initial = hkdf_extract(kInitialSalt, client_dcid);
    return {hkdf_expand_label(initial, "client in", {}, kHashLen),
            hkdf_expand_label(initial, "server in", {}, kHashLen)};
}

X25519KeyShare::X25519KeyShare()
{
    std::unique_ptr<EVP_PKEY_CTX, void (*)(EVP_PKEY_CTX*)> ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_X25519, nullptr),
                                                               EVP_PKEY_CTX_free);
    EVP_PKEY* raw = nullptr;
    if (!ctx || EVP_PKEY_keygen_init(ctx.get()) != 1 || EVP_PKEY_keygen(ctx.get(), &raw) != 1) fail("x25519 keygen");
    key_.reset(raw);
    std::size_t len = 32;
    public_.resize(len);
    if (EVP_PKEY_get_raw_public_key(key_.get(), public_.data(), &len) != 1) fail("x25519 public key");
}

Bytes X25519KeyShare::derive(ByteView peer_public) const
{
    if (peer_public.size() != 32) throw std::invalid_argument("x25519 public key must be 32 bytes");
    EvpPkeyPtr peer(EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer_public.data(), peer_public.size()));
    if (!peer) throw std::invalid_argument("malformed x25519 public key");
    std::unique_ptr<EVP_PKEY_CTX, void (*)(EVP_PKEY_CTX*)> ctx(EVP_PKEY_CTX_new(key_.get(), nullptr),
                                                               EVP_PKEY_CTX_free);
    std::size_t len = 32;
    Bytes shared(len);
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 || EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1 ||
        EVP_PKEY_derive(ctx.get(), shared.data(), &len) != 1) {
        throw std::invalid_argument("x25519 derivation failed");
    }
    if (std::all_of(shared.begin(), shared.end(), [](auto b) { return b == 0; })) {
        throw std::invalid_argument("x25519 produced all-zero secret");
    }
    return shared;
}

}  // namespace quictun::quic
