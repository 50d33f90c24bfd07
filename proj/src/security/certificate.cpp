#include "quictun/security/certificate.hpp"

#include <arpa/inet.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <openssl/bio.h>
#include <openssl/ec.h>
#include <openssl/err.h>
#include <openssl/pem.h>
#include <openssl/x509.h>
#include <openssl/x509v3.h>

namespace quictun::security {

namespace {

struct X509Deleter {
    void operator()(X509* x) const { X509_free(x); }
};
using X509Ptr = std::unique_ptr<X509, X509Deleter>;

struct BioDeleter {
    void operator()(BIO* b) const { BIO_free(b); }
};
using BioPtr = std::unique_ptr<BIO, BioDeleter>;

[[noreturn]] void openssl_fail(const std::string& what)
{
    char buf[256] = {};
    ERR_error_string_n(ERR_get_error(), buf, sizeof(buf));
    throw std::runtime_error(what + ": " + buf);
}

bool is_ip_literal(const std::string& name)
{
    unsigned char tmp[16];
    return inet_pton(AF_INET, name.c_str(), tmp) == 1 || inet_pton(AF_INET6, name.c_str(), tmp) == 1;
}

X509Ptr parse_der(ByteView der)
{
    const unsigned char* p = der.data();
    X509Ptr cert(d2i_X509(nullptr, &p, static_cast<long>(der.size())));
    if (!cert) throw std::invalid_argument("malformed DER certificate");
    return cert;
}

Bytes to_der(X509* cert)
{
    int len = i2d_X509(cert, nullptr);
    if (len <= 0) openssl_fail("i2d_X509");
    Bytes out(static_cast<std::size_t>(len));
    unsigned char* p = out.data();
    i2d_X509(cert, &p);
    return out;
}

Bytes pkey_to_der(EVP_PKEY* key)
{
    int len = i2d_PrivateKey(key, nullptr);
    if (len <= 0) openssl_fail("i2d_PrivateKey");
    Bytes out(static_cast<std::size_t>(len));
    unsigned char* p = out.data();
    i2d_PrivateKey(key, &p);
    return out;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool looks_like_pem(const std::string& data)
{
    return data.find("-----BEGIN") != std::string::npos;
}

}  // namespace

quic::EvpPkeyPtr CertificateMaterial::private_key() const
{
    const unsigned char* p = private_key_der.data();
    quic::EvpPkeyPtr key(d2i_AutoPrivateKey(nullptr, &p, static_cast<long>(private_key_der.size())));
    if (!key) throw std::invalid_argument("malformed private key");
    return key;
}

void CertificateMaterial::validate() const
{
    if (chain_der.empty()) throw std::invalid_argument("certificate chain is empty");
    if (subject_names.empty()) throw std::invalid_argument("certificate has no subject names");
    auto cert = parse_der(leaf());
    auto key = private_key();
    if (X509_check_private_key(cert.get(), key.get()) != 1) {
        ERR_clear_error();
        throw std::invalid_argument("private key does not match the leaf certificate");
    }
}

CertificateMaterial generate_self_signed(const std::vector<std::string>& subject_names)
{
    if (subject_names.empty()) throw std::invalid_argument("subject_names must not be empty");

    std::unique_ptr<EVP_PKEY_CTX, void (*)(EVP_PKEY_CTX*)> kctx(EVP_PKEY_CTX_new_id(EVP_PKEY_EC, nullptr),
                                                                EVP_PKEY_CTX_free);
    EVP_PKEY* raw_key = nullptr;
    if (!kctx || EVP_PKEY_keygen_init(kctx.get()) != 1 ||
        EVP_PKEY_CTX_set_ec_paramgen_curve_nid(kctx.get(), NID_X9_62_prime256v1) != 1 ||
        EVP_PKEY_keygen(kctx.get(), &raw_key) != 1) {
        openssl_fail("EC key generation");
    }
    quic::EvpPkeyPtr key(raw_key);

    X509Ptr cert(X509_new());
    if (!cert) openssl_fail("X509_new");
    X509_set_version(cert.get(), 2);

    Bytes serial(16);
    quic::random_bytes(serial);
    serial[0] &= 0x7f;
    std::unique_ptr<BIGNUM, void (*)(BIGNUM*)> bn(BN_bin2bn(serial.data(), static_cast<int>(serial.size()), nullptr),
                                                  BN_free);
    BN_to_ASN1_INTEGER(bn.get(), X509_get_serialNumber(cert.get()));

    X509_gmtime_adj(X509_getm_notBefore(cert.get()), -3600L);
    X509_gmtime_adj(X509_getm_notAfter(cert.get()), 90L * 24 * 3600);

    auto* name = X509_get_subject_name(cert.get());
    X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_UTF8,
                               reinterpret_cast<const unsigned char*>(subject_names.front().c_str()), -1, -1, 0);
    X509_set_issuer_name(cert.get(), name);
    X509_set_pubkey(cert.get(), key.get());

    std::string san;
    for (const auto& n : subject_names) {
        if (!san.empty()) san += ",";
        san += (is_ip_literal(n) ? "IP:" : "DNS:") + n;
    }
    X509V3_CTX v3;
    X509V3_set_ctx_nodb(&v3);
    X509V3_set_ctx(&v3, cert.get(), cert.get(), nullptr, nullptr, 0);
    for (auto [nid, value] : {std::pair<int, std::string>{NID_subject_alt_name, san},
                              {NID_basic_constraints, "critical,CA:FALSE"},
                              {NID_key_usage, "critical,digitalSignature"},
                              {NID_ext_key_usage, "serverAuth"}}) {
        X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &v3, nid, value.c_str());
        if (!ext) openssl_fail("certificate extension");
        X509_add_ext(cert.get(), ext, -1);
        X509_EXTENSION_free(ext);
    }

    if (X509_sign(cert.get(), key.get(), EVP_sha256()) <= 0) openssl_fail("X509_sign");

    CertificateMaterial out;
    out.chain_der.push_back(to_der(cert.get()));
    out.private_key_der = pkey_to_der(key.get());
    out.subject_names = subject_names;
    return out;
}

CertificateMaterial load_certificate_files(const std::filesystem::path& cert_file,
                                           const std::filesystem::path& key_file)
{
    auto cert_data = read_file(cert_file);
    auto key_data = read_file(key_file);

    CertificateMaterial out;
    if (looks_like_pem(cert_data)) {
        BioPtr bio(BIO_new_mem_buf(cert_data.data(), static_cast<int>(cert_data.size())));
        while (X509* c = PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr)) {
            X509Ptr owned(c);
            out.chain_der.push_back(to_der(c));
        }
        ERR_clear_error();
    } else {
        auto der = as_bytes(cert_data);
        parse_der(der);
        out.chain_der.emplace_back(der.begin(), der.end());
    }
    if (out.chain_der.empty()) throw std::invalid_argument("no certificate found in " + cert_file.string());

    if (looks_like_pem(key_data)) {
        BioPtr bio(BIO_new_mem_buf(key_data.data(), static_cast<int>(key_data.size())));
        quic::EvpPkeyPtr key(PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr));
        if (!key) throw std::invalid_argument("no private key found in " + key_file.string());
        out.private_key_der = pkey_to_der(key.get());
    } else {
        auto der = as_bytes(key_data);
        out.private_key_der.assign(der.begin(), der.end());
    }

    out.subject_names = subject_alt_names(out.leaf());
    if (out.subject_names.empty()) {
        auto cert = parse_der(out.leaf());
        char cn[256] = {};
        if (X509_NAME_get_text_by_NID(X509_get_subject_name(cert.get()), NID_commonName, cn, sizeof(cn)) > 0) {
            out.subject_names.emplace_back(cn);
        }
    }
    out.validate();
    return out;
}

std::string leaf_to_pem(const CertificateMaterial& material)
{
    auto cert = parse_der(material.leaf());
    BioPtr bio(BIO_new(BIO_s_mem()));
    PEM_write_bio_X509(bio.get(), cert.get());
    char* data = nullptr;
    long len = BIO_get_mem_data(bio.get(), &data);
    return {data, static_cast<std::size_t>(len)};
}

std::string private_key_to_pem(const CertificateMaterial& material)
{
    auto key = material.private_key();
    BioPtr bio(BIO_new(BIO_s_mem()));
    PEM_write_bio_PrivateKey(bio.get(), key.get(), nullptr, nullptr, 0, nullptr, nullptr);
    char* data = nullptr;
    long len = BIO_get_mem_data(bio.get(), &data);
    return {data, static_cast<std::size_t>(len)};
}

std::vector<std::string> subject_alt_names(ByteView certificate_der)
{
    auto cert = parse_der(certificate_der);
    std::vector<std::string> out;
    auto* names = static_cast<GENERAL_NAMES*>(X509_get_ext_d2i(cert.get(), NID_subject_alt_name, nullptr, nullptr));
    if (!names) return out;
    for (int i = 0; i < sk_GENERAL_NAME_num(names); ++i) {
        const GENERAL_NAME* gn = sk_GENERAL_NAME_value(names, i);
        if (gn->type == GEN_DNS) {
            auto* s = gn->d.dNSName;
            out.emplace_back(reinterpret_cast<const char*>(ASN1_STRING_get0_data(s)),
                             static_cast<std::size_t>(ASN1_STRING_length(s)));
        } else if (gn->type == GEN_IPADD) {
            auto* s = gn->d.iPAddress;
            char buf[INET6_ADDRSTRLEN] = {};
            int len = ASN1_STRING_length(s);
            int family = len == 4 ? AF_INET : AF_INET6;
            if ((len == 4 || len == 16) && inet_ntop(family, ASN1_STRING_get0_data(s), buf, sizeof(buf))) {
                out.emplace_back(buf);
            }
        }
    }
    GENERAL_NAMES_free(names);
    return out;
}

}  // namespace quictun::security
