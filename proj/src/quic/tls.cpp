#include "quictun/quic/tls.hpp"

#include <algorithm>
#include <cstring>

#include <openssl/err.h>
#include <openssl/rsa.h>
#include <openssl/x509.h>

namespace quictun::quic {

namespace {

namespace msg {
constexpr std::uint8_t client_hello = 1;
constexpr std::uint8_t server_hello = 2;
constexpr std::uint8_t new_session_ticket = 4;
constexpr std::uint8_t encrypted_extensions = 8;
constexpr std::uint8_t certificate = 11;
constexpr std::uint8_t certificate_verify = 15;
constexpr std::uint8_t finished = 20;
}  // namespace msg

namespace ext {
constexpr std::uint16_t server_name = 0;
constexpr std::uint16_t supported_groups = 10;
constexpr std::uint16_t signature_algorithms = 13;
constexpr std::uint16_t alpn = 16;
constexpr std::uint16_t supported_versions = 43;
constexpr std::uint16_t key_share = 51;
constexpr std::uint16_t quic_transport_parameters = 57;
}  // namespace ext

constexpr std::uint16_t kTls13 = 0x0304;
constexpr std::uint16_t kLegacyVersion = 0x0303;
constexpr std::uint16_t kAes128GcmSha256 = 0x1301;
constexpr std::uint16_t kGroupX25519 = 0x001d;
constexpr std::uint16_t kSigEcdsaP256Sha256 = 0x0403;
constexpr std::uint16_t kSigRsaPssRsaeSha256 = 0x0804;
constexpr std::uint16_t kSigEd25519 = 0x0807;

constexpr std::array<std::uint8_t, 32> kHelloRetryRandom = {
    0xCF, 0x21, 0xAD, 0x74, 0xE5, 0x9A, 0x61, 0x11, 0xBE, 0x1D, 0x8C, 0x02, 0x1E, 0x65, 0xB8, 0x91,
    0xC2, 0xA2, 0x11, 0x16, 0x7A, 0xBB, 0x8C, 0x5E, 0x07, 0x9E, 0x09, 0xE2, 0xC8, 0xA8, 0x33, 0x9C};

[[noreturn]] void alert(std::uint8_t code, const std::string& what)
{
    throw TlsError(code, what);
}

Bytes derive_secret(ByteView secret, std::string_view label, ByteView transcript_hash)
{
    return hkdf_expand_label(secret, label, transcript_hash, kHashLen);
}

Bytes finished_mac(ByteView base_secret, ByteView transcript_hash)
{
    auto key = hkdf_expand_label(base_secret, "finished", {}, kHashLen);
    return hmac_sha256(key, transcript_hash);
}

Bytes signed_content(std::string_view context, ByteView transcript_hash)
{
    Bytes out(64, 0x20);
    out.insert(out.end(), context.begin(), context.end());
    out.push_back(0);
    out.insert(out.end(), transcript_hash.begin(), transcript_hash.end());
    return out;
}

constexpr std::string_view kServerVerifyContext = "TLS 1.3, server CertificateVerify";

using PkeyCtxPtr = std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)>;

std::uint16_t scheme_for_key(EVP_PKEY* key)
{
    switch (EVP_PKEY_base_id(key)) {
    case EVP_PKEY_EC: return kSigEcdsaP256Sha256;
    case EVP_PKEY_RSA: return kSigRsaPssRsaeSha256;
    case EVP_PKEY_ED25519: return kSigEd25519;
    default: alert(tls_alert::internal_error, "unsupported server key type");
    }
}

Bytes sign(EVP_PKEY* key, std::uint16_t scheme, ByteView content)
{
    PkeyCtxPtr md(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_PKEY_CTX* pctx = nullptr;
    const EVP_MD* digest = scheme == kSigEd25519 ? nullptr : EVP_sha256();
    if (EVP_DigestSignInit(md.get(), &pctx, digest, nullptr, key) != 1) alert(tls_alert::internal_error, "sign init");
    if (scheme == kSigRsaPssRsaeSha256) {
        EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING);
        EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, RSA_PSS_SALTLEN_DIGEST);
    }
    std::size_t len = 0;
    if (EVP_DigestSign(md.get(), nullptr, &len, content.data(), content.size()) != 1) {
        alert(tls_alert::internal_error, "sign size");
    }
    Bytes sig(len);
    if (EVP_DigestSign(md.get(), sig.data(), &len, content.data(), content.size()) != 1) {
        alert(tls_alert::internal_error, "sign");
    }
    sig.resize(len);
    return sig;
}

bool verify_signature(EVP_PKEY* key, std::uint16_t scheme, ByteView content, ByteView sig)
{
    int type = EVP_PKEY_base_id(key);
    bool compatible = (scheme == kSigEcdsaP256Sha256 && type == EVP_PKEY_EC) ||
                      (scheme == kSigRsaPssRsaeSha256 && type == EVP_PKEY_RSA) ||
                      (scheme == kSigEd25519 && type == EVP_PKEY_ED25519);
    if (!compatible) return false;
    PkeyCtxPtr md(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_PKEY_CTX* pctx = nullptr;
    const EVP_MD* digest = scheme == kSigEd25519 ? nullptr : EVP_sha256();
    if (EVP_DigestVerifyInit(md.get(), &pctx, digest, nullptr, key) != 1) return false;
    if (scheme == kSigRsaPssRsaeSha256) {
        EVP_PKEY_CTX_set_rsa_padding(pctx, RSA_PKCS1_PSS_PADDING);
        EVP_PKEY_CTX_set_rsa_pss_saltlen(pctx, RSA_PSS_SALTLEN_DIGEST);
    }
    bool ok = EVP_DigestVerify(md.get(), sig.data(), sig.size(), content.data(), content.size()) == 1;
    ERR_clear_error();
    return ok;
}

void write_alpn_list(BufferWriter& w, const std::vector<std::string>& protocols)
{
    auto list = w.begin_block(2);
    for (const auto& p : protocols) {
        w.u8(static_cast<std::uint8_t>(p.size()));
        w.bytes(as_bytes(p));
    }
    w.end_block(list, 2);
}

std::vector<std::string> read_alpn_list(ByteView data)
{
    BufferReader r(data);
    BufferReader list(r.block(2));
    std::vector<std::string> out;
    while (!list.empty()) {
        auto p = list.block(1);
        if (p.empty()) alert(tls_alert::decode_error, "empty ALPN protocol name");
        out.emplace_back(reinterpret_cast<const char*>(p.data()), p.size());
    }
    if (out.empty()) alert(tls_alert::decode_error, "empty ALPN list");
    return out;
}

struct Extension {
    std::uint16_t type;
    ByteView data;
};

std::vector<Extension> read_extensions(BufferReader& r)
{
    BufferReader block(r.block(2));
    std::vector<Extension> out;
    while (!block.empty()) {
        auto type = block.u16();
        auto data = block.block(2);
        for (const auto& e : out) {
            if (e.type == type) alert(tls_alert::illegal_parameter, "duplicate extension");
        }
        out.push_back({type, data});
    }
    return out;
}

const Extension* find_ext(const std::vector<Extension>& exts, std::uint16_t type)
{
    for (const auto& e : exts) {
        if (e.type == type) return &e;
    }
    return nullptr;
}

void begin_ext(BufferWriter& w, std::uint16_t type, std::size_t& pos)
{
    w.u16(type);
    pos = w.begin_block(2);
}

}  // namespace

struct TlsHandshake::State {
    enum class Step {
        client_start,
        client_wait_sh,
        client_wait_ee,
        client_wait_cert,
        client_wait_cv,
        client_wait_finished,
        server_wait_ch,
        server_wait_finished,
        connected,
    };

    bool client = false;
    Step step = Step::client_start;
    TlsClientConfig client_config;
    std::shared_ptr<const TlsServerConfig> server_config;
    Bytes local_params;

    Transcript transcript;
    std::optional<X25519KeyShare> key_share;
    std::array<Bytes, 3> inbound;  // per-level reassembly of handshake messages
    std::vector<HandshakeOutput> output;
    std::vector<TrafficSecret> secrets;

    Bytes handshake_secret;
    Bytes client_hs;
    Bytes server_hs;
    Bytes master_secret;
    Bytes client_finished_expected;

    std::optional<Bytes> peer_params;
    std::string alpn;
    std::vector<Bytes> peer_certs;

    void emit(EncryptionLevel level, const Bytes& message)
    {
        transcript.update(message);
        if (!output.empty() && output.back().level == level) {
            output.back().data.insert(output.back().data.end(), message.begin(), message.end());
        } else {
            output.push_back({level, message});
        }
    }

    static Bytes frame(std::uint8_t type, const Bytes& body)
    {
        BufferWriter w;
        w.u8(type);
        w.u24(static_cast<std::uint32_t>(body.size()));
        w.bytes(body);
        return w.take();
    }

    void derive_handshake_secrets(ByteView shared)
    {
        Bytes zeros(kHashLen, 0);
        auto early = hkdf_extract({}, zeros);
        auto empty_hash = sha256({});
        auto derived = derive_secret(early, "derived", empty_hash);
        handshake_secret = hkdf_extract(derived, shared);
        auto th = transcript.digest();
        client_hs = derive_secret(handshake_secret, "c hs traffic", th);
        server_hs = derive_secret(handshake_secret, "s hs traffic", th);
        secrets.push_back({EncryptionLevel::handshake, false, client ? server_hs : client_hs});
        secrets.push_back({EncryptionLevel::handshake, true, client ? client_hs : server_hs});
        auto derived2 = derive_secret(handshake_secret, "derived", empty_hash);
        master_secret = hkdf_extract(derived2, zeros);
    }

    void derive_application_secrets()
    {
        auto th = transcript.digest();
        auto client_ap = derive_secret(master_secret, "c ap traffic", th);
        auto server_ap = derive_secret(master_secret, "s ap traffic", th);
        secrets.push_back({EncryptionLevel::application, false, client ? server_ap : client_ap});
        secrets.push_back({EncryptionLevel::application, true, client ? client_ap : server_ap});
    }

    // ---- client ----

    void client_send_hello()
    {
        key_share.emplace();
        BufferWriter w;
        w.u16(kLegacyVersion);
        Bytes random(32);
        random_bytes(random);
        w.bytes(random);
        w.u8(0);  // legacy_session_id: QUIC forbids middlebox compatibility mode
        w.u16(2);
        w.u16(kAes128GcmSha256);
        w.u8(1);
        w.u8(0);
        auto exts = w.begin_block(2);
        std::size_t pos = 0;

        const auto& name = client_config.server_name;
        bool is_ip = name.find_first_not_of("0123456789.") == std::string::npos || name.find(':') != std::string::npos;
        if (!name.empty() && !is_ip) {
            begin_ext(w, ext::server_name, pos);
            auto list = w.begin_block(2);
            w.u8(0);
            auto host = w.begin_block(2);
            w.bytes(as_bytes(name));
            w.end_block(host, 2);
            w.end_block(list, 2);
            w.end_block(pos, 2);
        }

        begin_ext(w, ext::supported_groups, pos);
        w.u16(2);
        w.u16(kGroupX25519);
        w.end_block(pos, 2);

        begin_ext(w, ext::signature_algorithms, pos);
        w.u16(6);
        w.u16(kSigEcdsaP256Sha256);
        w.u16(kSigRsaPssRsaeSha256);
        w.u16(kSigEd25519);
        w.end_block(pos, 2);

        begin_ext(w, ext::alpn, pos);
        write_alpn_list(w, client_config.alpn);
        w.end_block(pos, 2);

        begin_ext(w, ext::supported_versions, pos);
        w.u8(2);
        w.u16(kTls13);
        w.end_block(pos, 2);

        begin_ext(w, ext::key_share, pos);
        auto shares = w.begin_block(2);
        w.u16(kGroupX25519);
        auto key = w.begin_block(2);
        w.bytes(key_share->public_key());
        w.end_block(key, 2);
        w.end_block(shares, 2);
        w.end_block(pos, 2);

        begin_ext(w, ext::quic_transport_parameters, pos);
        w.bytes(local_params);
        w.end_block(pos, 2);

        w.end_block(exts, 2);
        emit(EncryptionLevel::initial, frame(msg::client_hello, w.take()));
        step = Step::client_wait_sh;
    }

    void client_on_server_hello(ByteView body)
    {
        BufferReader r(body);
        if (r.u16() != kLegacyVersion) alert(tls_alert::protocol_version, "bad ServerHello legacy_version");
        auto random = r.bytes(32);
        if (std::equal(random.begin(), random.end(), kHelloRetryRandom.begin())) {
            alert(tls_alert::handshake_failure, "HelloRetryRequest is not supported");
        }
        if (!r.block(1).empty()) alert(tls_alert::illegal_parameter, "unexpected legacy_session_id_echo");
        if (r.u16() != kAes128GcmSha256) alert(tls_alert::illegal_parameter, "server selected unsupported cipher");
        if (r.u8() != 0) alert(tls_alert::illegal_parameter, "bad compression method");
        auto exts = read_extensions(r);
        auto* versions = find_ext(exts, ext::supported_versions);
        if (!versions) alert(tls_alert::missing_extension, "ServerHello lacks supported_versions");
        BufferReader vr(versions->data);
        if (vr.u16() != kTls13) alert(tls_alert::protocol_version, "server did not select TLS 1.3");
        auto* ks = find_ext(exts, ext::key_share);
        if (!ks) alert(tls_alert::missing_extension, "ServerHello lacks key_share");
        BufferReader kr(ks->data);
        if (kr.u16() != kGroupX25519) alert(tls_alert::illegal_parameter, "server selected unsupported group");
        auto peer_key = kr.block(2);
        Bytes shared;
        try {
            shared = key_share->derive(peer_key);
        } catch (const std::exception& e) {
            alert(tls_alert::illegal_parameter, e.what());
        }
        derive_handshake_secrets(shared);
        step = Step::client_wait_ee;
    }

    void client_on_encrypted_extensions(ByteView body)
    {
        BufferReader r(body);
        auto exts = read_extensions(r);
        auto* alpn_ext = find_ext(exts, ext::alpn);
        if (!alpn_ext) alert(tls_alert::no_application_protocol, "server did not negotiate ALPN");
        auto selected = read_alpn_list(alpn_ext->data);
        if (selected.size() != 1 ||
            std::find(client_config.alpn.begin(), client_config.alpn.end(), selected.front()) ==
                client_config.alpn.end()) {
            alert(tls_alert::no_application_protocol, "server selected an unoffered ALPN");
        }
        alpn = selected.front();
        auto* tp = find_ext(exts, ext::quic_transport_parameters);
        if (!tp) alert(tls_alert::missing_extension, "server sent no QUIC transport parameters");
        peer_params = Bytes(tp->data.begin(), tp->data.end());
        step = Step::client_wait_cert;
    }

    void client_on_certificate(ByteView body)
    {
        BufferReader r(body);
        if (!r.block(1).empty()) alert(tls_alert::decode_error, "non-empty certificate_request_context");
        BufferReader list(r.block(3));
        while (!list.empty()) {
            auto der = list.block(3);
            list.block(2);
            peer_certs.emplace_back(der.begin(), der.end());
        }
        if (peer_certs.empty()) alert(tls_alert::decode_error, "server sent an empty certificate list");
        auto err = client_config.verifier->verify(peer_certs, client_config.server_name);
        if (err) alert(tls_alert::bad_certificate, *err);
        step = Step::client_wait_cv;
    }

    void client_on_certificate_verify(ByteView body, const Bytes& transcript_before)
    {
        BufferReader r(body);
        auto scheme = r.u16();
        auto sig = r.block(2);
        const unsigned char* p = peer_certs.front().data();
        std::unique_ptr<X509, void (*)(X509*)> leaf(
            d2i_X509(nullptr, &p, static_cast<long>(peer_certs.front().size())), X509_free);
        if (!leaf) alert(tls_alert::bad_certificate, "malformed leaf certificate");
        EvpPkeyPtr key(X509_get_pubkey(leaf.get()));
        if (!key) alert(tls_alert::bad_certificate, "leaf certificate has no usable key");
        if (!verify_signature(key.get(), scheme, signed_content(kServerVerifyContext, transcript_before), sig)) {
            alert(tls_alert::decrypt_error, "CertificateVerify signature invalid");
        }
        step = Step::client_wait_finished;
    }

    void client_on_finished(ByteView body, const Bytes& transcript_before)
    {
        auto expected = finished_mac(server_hs, transcript_before);
        if (body.size() != expected.size() || CRYPTO_memcmp(body.data(), expected.data(), expected.size()) != 0) {
            alert(tls_alert::decrypt_error, "server Finished verification failed");
        }
        // Application secrets cover the transcript through the server Finished.
        derive_application_secrets();
        auto mac = finished_mac(client_hs, transcript.digest());
        emit(EncryptionLevel::handshake, frame(msg::finished, mac));
        step = Step::connected;
    }

    // ---- server ----

    void server_on_client_hello(ByteView body)
    {
        BufferReader r(body);
        r.u16();  // legacy_version
        r.bytes(32);
        auto session_id = r.block(1);
        Bytes session_echo(session_id.begin(), session_id.end());
        BufferReader suites(r.block(2));
        bool has_suite = false;
        while (!suites.empty()) has_suite |= suites.u16() == kAes128GcmSha256;
        if (!has_suite) alert(tls_alert::handshake_failure, "client does not offer TLS_AES_128_GCM_SHA256");
        r.block(1);  // compression methods
        auto exts = read_extensions(r);

        auto* versions = find_ext(exts, ext::supported_versions);
        if (!versions) alert(tls_alert::protocol_version, "client does not offer TLS 1.3");
        BufferReader vr(versions->data);
        BufferReader vlist(vr.block(1));
        bool tls13 = false;
        while (!vlist.empty()) tls13 |= vlist.u16() == kTls13;
        if (!tls13) alert(tls_alert::protocol_version, "client does not offer TLS 1.3");

        auto key = server_config->certificate.private_key();
        auto scheme = scheme_for_key(key.get());
        auto* sigs = find_ext(exts, ext::signature_algorithms);
        if (!sigs) alert(tls_alert::missing_extension, "client sent no signature_algorithms");
        BufferReader sr(sigs->data);
        BufferReader slist(sr.block(2));
        bool sig_ok = false;
        while (!slist.empty()) sig_ok |= slist.u16() == scheme;
        if (!sig_ok) alert(tls_alert::handshake_failure, "no common signature algorithm");

        auto* ks = find_ext(exts, ext::key_share);
        if (!ks) alert(tls_alert::missing_extension, "client sent no key_share");
        BufferReader kr(ks->data);
        BufferReader shares(kr.block(2));
        std::optional<Bytes> peer_key;
        while (!shares.empty()) {
            auto group = shares.u16();
            auto k = shares.block(2);
            if (group == kGroupX25519 && !peer_key) peer_key = Bytes(k.begin(), k.end());
        }
        if (!peer_key) alert(tls_alert::handshake_failure, "client offered no x25519 key share");

        auto* alpn_ext = find_ext(exts, ext::alpn);
        if (!alpn_ext) alert(tls_alert::no_application_protocol, "client did not offer ALPN");
        for (const auto& offered : read_alpn_list(alpn_ext->data)) {
            if (std::find(server_config->alpn.begin(), server_config->alpn.end(), offered) !=
                server_config->alpn.end()) {
                alpn = offered;
                break;
            }
        }
        if (alpn.empty()) alert(tls_alert::no_application_protocol, "no common ALPN protocol");

        auto* tp = find_ext(exts, ext::quic_transport_parameters);
        if (!tp) alert(tls_alert::missing_extension, "client sent no QUIC transport parameters");
        peer_params = Bytes(tp->data.begin(), tp->data.end());

        // ServerHello
        key_share.emplace();
        Bytes shared;
        try {
            shared = key_share->derive(*peer_key);
        } catch (const std::exception& e) {
            alert(tls_alert::illegal_parameter, e.what());
        }
        {
            BufferWriter w;
            w.u16(kLegacyVersion);
            Bytes random(32);
            random_bytes(random);
            w.bytes(random);
            w.u8(static_cast<std::uint8_t>(session_echo.size()));
            w.bytes(session_echo);
            w.u16(kAes128GcmSha256);
            w.u8(0);
            auto exts_pos = w.begin_block(2);
            std::size_t pos = 0;
            begin_ext(w, ext::supported_versions, pos);
            w.u16(kTls13);
            w.end_block(pos, 2);
            begin_ext(w, ext::key_share, pos);
            w.u16(kGroupX25519);
            auto kpos = w.begin_block(2);
            w.bytes(key_share->public_key());
            w.end_block(kpos, 2);
            w.end_block(pos, 2);
            w.end_block(exts_pos, 2);
            emit(EncryptionLevel::initial, frame(msg::server_hello, w.take()));
        }
        derive_handshake_secrets(shared);

        {
            BufferWriter w;
            auto exts_pos = w.begin_block(2);
            std::size_t pos = 0;
            begin_ext(w, ext::alpn, pos);
            write_alpn_list(w, {alpn});
            w.end_block(pos, 2);
            begin_ext(w, ext::quic_transport_parameters, pos);
            w.bytes(local_params);
            w.end_block(pos, 2);
            w.end_block(exts_pos, 2);
            emit(EncryptionLevel::handshake, frame(msg::encrypted_extensions, w.take()));
        }
        {
            BufferWriter w;
            w.u8(0);
            auto list = w.begin_block(3);
            for (const auto& der : server_config->certificate.chain_der) {
                auto c = w.begin_block(3);
                w.bytes(der);
                w.end_block(c, 3);
                w.u16(0);
            }
            w.end_block(list, 3);
            emit(EncryptionLevel::handshake, frame(msg::certificate, w.take()));
        }
        {
            auto sig = sign(key.get(), scheme, signed_content(kServerVerifyContext, transcript.digest()));
            BufferWriter w;
            w.u16(scheme);
            auto s = w.begin_block(2);
            w.bytes(sig);
            w.end_block(s, 2);
            emit(EncryptionLevel::handshake, frame(msg::certificate_verify, w.take()));
        }
        emit(EncryptionLevel::handshake, frame(msg::finished, finished_mac(server_hs, transcript.digest())));
        client_finished_expected = finished_mac(client_hs, transcript.digest());
        derive_application_secrets();
        step = Step::server_wait_finished;
    }

    void server_on_finished(ByteView body)
    {
        if (body.size() != client_finished_expected.size() ||
            CRYPTO_memcmp(body.data(), client_finished_expected.data(), body.size()) != 0) {
            alert(tls_alert::decrypt_error, "client Finished verification failed");
        }
        step = Step::connected;
    }

    // ---- dispatch ----

    void handle_message(EncryptionLevel level, std::uint8_t type, ByteView whole, ByteView body)
    {
        auto expect = [&](EncryptionLevel l, std::uint8_t t) {
            if (level != l || type != t) alert(tls_alert::unexpected_message, "unexpected handshake message");
        };
        auto before = transcript.digest();
        switch (step) {
        case Step::client_wait_sh:
            expect(EncryptionLevel::initial, msg::server_hello);
            transcript.update(whole);
            client_on_server_hello(body);
            return;
        case Step::client_wait_ee:
            expect(EncryptionLevel::handshake, msg::encrypted_extensions);
            transcript.update(whole);
            client_on_encrypted_extensions(body);
            return;
        case Step::client_wait_cert:
            expect(EncryptionLevel::handshake, msg::certificate);
            transcript.update(whole);
            client_on_certificate(body);
            return;
        case Step::client_wait_cv:
            expect(EncryptionLevel::handshake, msg::certificate_verify);
            transcript.update(whole);
            client_on_certificate_verify(body, before);
            return;
        case Step::client_wait_finished:
            expect(EncryptionLevel::handshake, msg::finished);
            transcript.update(whole);
            client_on_finished(body, before);
            return;
        case Step::server_wait_ch:
            expect(EncryptionLevel::initial, msg::client_hello);
            transcript.update(whole);
            server_on_client_hello(body);
            return;
        case Step::server_wait_finished:
            expect(EncryptionLevel::handshake, msg::finished);
            server_on_finished(body);
            transcript.update(whole);
            return;
        case Step::connected:
            if (client && level == EncryptionLevel::application && type == msg::new_session_ticket) return;
            alert(tls_alert::unexpected_message, "unexpected post-handshake message");
        case Step::client_start:
            alert(tls_alert::unexpected_message, "handshake data before ClientHello");
        }
    }
};

TlsHandshake::TlsHandshake(TlsClientConfig config, Bytes local_transport_params) : s_(std::make_unique<State>())
{
    if (!config.verifier) throw std::invalid_argument("client TLS config requires a certificate verifier");
    if (config.alpn.empty()) throw std::invalid_argument("client TLS config requires at least one ALPN");
    s_->client = true;
    s_->step = State::Step::client_start;
    s_->client_config = std::move(config);
    s_->local_params = std::move(local_transport_params);
}

TlsHandshake::TlsHandshake(std::shared_ptr<const TlsServerConfig> config, Bytes local_transport_params)
    : s_(std::make_unique<State>())
{
    if (!config || config->alpn.empty()) throw std::invalid_argument("server TLS config requires ALPN");
    s_->client = false;
    s_->step = State::Step::server_wait_ch;
    s_->server_config = std::move(config);
    s_->local_params = std::move(local_transport_params);
}

TlsHandshake::~TlsHandshake() = default;
TlsHandshake::TlsHandshake(TlsHandshake&&) noexcept = default;
TlsHandshake& TlsHandshake::operator=(TlsHandshake&&) noexcept = default;

bool TlsHandshake::is_client() const { return s_->client; }

void TlsHandshake::start()
{
    if (s_->client && s_->step == State::Step::client_start) s_->client_send_hello();
}

void TlsHandshake::receive(EncryptionLevel level, ByteView data)
{
    auto& buf = s_->inbound[static_cast<std::size_t>(level)];
    buf.insert(buf.end(), data.begin(), data.end());
    if (buf.size() > 256 * 1024) alert(tls_alert::internal_error, "handshake message too large");
    std::size_t pos = 0;
    while (buf.size() - pos >= 4) {
        std::uint32_t len = (std::uint32_t{buf[pos + 1]} << 16) | (std::uint32_t{buf[pos + 2]} << 8) | buf[pos + 3];
        if (buf.size() - pos < 4 + len) break;
        ByteView whole(buf.data() + pos, 4 + len);
        try {
            s_->handle_message(level, buf[pos], whole, whole.subspan(4));
        } catch (const DecodeError& e) {
            alert(tls_alert::decode_error, e.what());
        }
        pos += 4 + len;
    }
    buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(pos));
}

std::vector<HandshakeOutput> TlsHandshake::take_output() { return std::exchange(s_->output, {}); }
std::vector<TrafficSecret> TlsHandshake::take_secrets() { return std::exchange(s_->secrets, {}); }
bool TlsHandshake::complete() const { return s_->step == State::Step::connected; }
const std::optional<Bytes>& TlsHandshake::peer_transport_params() const { return s_->peer_params; }
const std::string& TlsHandshake::negotiated_alpn() const { return s_->alpn; }
const std::vector<Bytes>& TlsHandshake::peer_certificates() const { return s_->peer_certs; }

}  // namespace quictun::quic
