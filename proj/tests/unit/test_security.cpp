#include <gtest/gtest.h>

#include <ctime>
#include <fstream>

#include <openssl/evp.h>
#include <openssl/x509.h>
#include <openssl/x509v3.h>

#include "quictun/security/certificate.hpp"
#include "quictun/security/trust.hpp"

using namespace quictun;
using namespace quictun::security;

namespace {

struct X509Free {
    void operator()(X509* x) const { X509_free(x); }
};
using X509Ptr = std::unique_ptr<X509, X509Free>;

X509Ptr parse(const Bytes& der)
{
    const unsigned char* p = der.data();
    return X509Ptr(d2i_X509(nullptr, &p, static_cast<long>(der.size())));
}

Bytes to_der(X509* x)
{
    int n = i2d_X509(x, nullptr);
    Bytes out(static_cast<std::size_t>(n));
    auto* p = out.data();
    i2d_X509(x, &p);
    return out;
}

// Signed-seconds offset of an ASN1 time from now.
long offset_from_now(const ASN1_TIME* t)
{
    int days = 0, secs = 0;
    ASN1_TIME_diff(&days, &secs, nullptr, t);
    return days * 86400L + secs;
}

// Self-signed P-256 certificate with a DNS SAN, valid for [now + from, now + to] seconds.
Bytes make_cert(long from, long to, const char* dns = "localhost")
{
    EVP_PKEY* key = EVP_EC_gen("P-256");
    X509Ptr x(X509_new());
    X509_set_version(x.get(), 2);
    ASN1_INTEGER_set(X509_get_serialNumber(x.get()), 7);
    X509_gmtime_adj(X509_getm_notBefore(x.get()), from);
    X509_gmtime_adj(X509_getm_notAfter(x.get()), to);
    auto* name = X509_get_subject_name(x.get());
    X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>(dns), -1, -1, 0);
    X509_set_issuer_name(x.get(), name);
    X509_set_pubkey(x.get(), key);
    X509V3_CTX ctx;
    X509V3_set_ctx_nodb(&ctx);
    X509V3_set_ctx(&ctx, x.get(), x.get(), nullptr, nullptr, 0);
    std::string san = std::string("DNS:") + dns;
    auto* ext = X509V3_EXT_conf_nid(nullptr, &ctx, NID_subject_alt_name, san.c_str());
    X509_add_ext(x.get(), ext, -1);
    X509_EXTENSION_free(ext);
    X509_sign(x.get(), key, EVP_sha256());
    EVP_PKEY_free(key);
    return to_der(x.get());
}

std::filesystem::path temp_dir()
{
    auto d = std::filesystem::temp_directory_path() /
             ("quictun-sec-" + std::to_string(::getpid()) + "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(d);
    return d;
}

void write_file(const std::filesystem::path& p, std::string_view data)
{
    std::ofstream(p, std::ios::binary) << data;
}

}  // namespace

TEST(Certificate, SelfSignedCarriesRequestedNames)
{
    auto m = generate_self_signed({"localhost", "127.0.0.1", "::1", "tunnel.example"});
    EXPECT_NO_THROW(m.validate());
    auto x = parse(m.leaf());
    ASSERT_TRUE(x);

    // Read the SAN extension with OpenSSL's own parser.
    std::set<std::string> dns, ips;
    auto* gens = static_cast<GENERAL_NAMES*>(X509_get_ext_d2i(x.get(), NID_subject_alt_name, nullptr, nullptr));
    ASSERT_NE(gens, nullptr);
    for (int i = 0; i < sk_GENERAL_NAME_num(gens); ++i) {
        auto* g = sk_GENERAL_NAME_value(gens, i);
        if (g->type == GEN_DNS) {
            dns.insert(reinterpret_cast<const char*>(ASN1_STRING_get0_data(g->d.dNSName)));
        } else if (g->type == GEN_IPADD) {
            ips.insert(std::to_string(ASN1_STRING_length(g->d.iPAddress)));
        }
    }
    GENERAL_NAMES_free(gens);
    EXPECT_EQ(dns, (std::set<std::string>{"localhost", "tunnel.example"}));
    EXPECT_EQ(ips, (std::set<std::string>{"4", "16"}));  // one v4, one v6 literal

    auto names = subject_alt_names(m.leaf());
    EXPECT_EQ(std::set<std::string>(names.begin(), names.end()),
              (std::set<std::string>{"localhost", "127.0.0.1", "::1", "tunnel.example"}));
}

TEST(Certificate, ValidityWindowAndKeyMatch)
{
    auto m = generate_self_signed({"localhost"});
    auto x = parse(m.leaf());
    long nb = offset_from_now(X509_get0_notBefore(x.get()));
    long na = offset_from_now(X509_get0_notAfter(x.get()));
    EXPECT_NEAR(nb, -3600, 5);
    EXPECT_NEAR(na, 90L * 86400, 5);

    auto key = m.private_key();
    EXPECT_EQ(X509_check_private_key(x.get(), key.get()), 1);
    EXPECT_EQ(EVP_PKEY_get_base_id(key.get()), EVP_PKEY_EC);
}

TEST(Certificate, ValidateRejectsMismatchAndEmpty)
{
    auto a = generate_self_signed({"a"});
    auto b = generate_self_signed({"b"});
    auto mixed = a;
    mixed.private_key_der = b.private_key_der;
    EXPECT_THROW(mixed.validate(), std::invalid_argument);
    EXPECT_THROW(generate_self_signed({}), std::invalid_argument);
    auto no_chain = a;
    no_chain.chain_der.clear();
    EXPECT_THROW(no_chain.validate(), std::invalid_argument);
}

TEST(Certificate, PemAndDerFilesLoad)
{
    auto dir = temp_dir();
    auto m = generate_self_signed({"localhost"});
    write_file(dir / "cert.pem", leaf_to_pem(m));
    write_file(dir / "key.pem", private_key_to_pem(m));
    auto loaded = load_certificate_files(dir / "cert.pem", dir / "key.pem");
    EXPECT_EQ(loaded.leaf(), m.leaf());
    EXPECT_NO_THROW(loaded.validate());

    write_file(dir / "cert.der", std::string(m.leaf().begin(), m.leaf().end()));
    write_file(dir / "key.der", std::string(m.private_key_der.begin(), m.private_key_der.end()));
    auto der = load_certificate_files(dir / "cert.der", dir / "key.der");
    EXPECT_EQ(der.leaf(), m.leaf());
    EXPECT_EQ(der.subject_names, std::vector<std::string>{"localhost"});

    write_file(dir / "junk", "not a certificate");
    EXPECT_THROW(load_certificate_files(dir / "junk", dir / "key.pem"), std::exception);
    EXPECT_THROW(load_certificate_files(dir / "missing.pem", dir / "key.pem"), std::exception);
    auto other = generate_self_signed({"x"});
    write_file(dir / "other-key.pem", private_key_to_pem(other));
    EXPECT_THROW(load_certificate_files(dir / "cert.pem", dir / "other-key.pem"), std::invalid_argument);
    std::filesystem::remove_all(dir);
}

// Expected verdicts follow directly from the SAN list and validity window.
TEST(Trust, PinnedLeafVerdictsFollowNamesAndValidity)
{
    auto m = generate_self_signed({"localhost", "127.0.0.1"});
    auto strict = build_trust({TrustMode::verify_standard, {m.leaf()}});
    std::vector<Bytes> chain{m.leaf()};
    struct Case {
        const char* name;
        bool ok;
    };
    for (auto c : {Case{"localhost", true}, Case{"LOCALHOST", true}, Case{"127.0.0.1", true}, Case{"", true},
                   Case{"127.0.0.2", false}, Case{"::1", false}, Case{"example.com", false},
                   Case{"sub.localhost", false}}) {
        auto err = strict->verify(chain, c.name);
        EXPECT_EQ(!err.has_value(), c.ok) << c.name << ": " << err.value_or("accepted");
    }

    auto expired = make_cert(-10 * 86400, -86400);
    auto future = make_cert(86400, 10 * 86400);
    auto current = make_cert(-60, 86400);
    auto check = [](const Bytes& der) {
        return build_trust({TrustMode::verify_standard, {der}})->verify(std::vector<Bytes>{der}, "localhost");
    };
    EXPECT_TRUE(check(expired));
    EXPECT_TRUE(check(future));
    EXPECT_FALSE(check(current)) << *check(current);
}

TEST(Trust, UnpinnedSelfSignedIsRejected)
{
    auto m = generate_self_signed({"localhost"});
    auto strict = build_trust({TrustMode::verify_standard, {}});
    auto err = strict->verify(std::vector<Bytes>{m.leaf()}, "localhost");
    ASSERT_TRUE(err);
    EXPECT_NE(err->find("self-signed"), std::string::npos) << *err;

    auto other = generate_self_signed({"localhost"});
    auto wrong_pin = build_trust({TrustMode::verify_standard, {other.leaf()}});
    EXPECT_TRUE(wrong_pin->verify(std::vector<Bytes>{m.leaf()}, "localhost"));
    EXPECT_TRUE(strict->verify(std::vector<Bytes>{}, "localhost"));
    EXPECT_TRUE(strict->verify(std::vector<Bytes>{Bytes{1, 2, 3}}, "localhost"));
}

TEST(Trust, InsecureAcceptsAnyCertificate)
{
    auto any = build_trust({TrustMode::insecure_accept_any, {}});
    EXPECT_EQ(any->mode(), TrustMode::insecure_accept_any);
    auto m = generate_self_signed({"localhost"});
    EXPECT_FALSE(any->verify(std::vector<Bytes>{m.leaf()}, "wrong.name"));
    EXPECT_FALSE(any->verify(std::vector<Bytes>{make_cert(-10 * 86400, -86400)}, "localhost"));
    EXPECT_TRUE(any->verify(std::vector<Bytes>{}, "localhost"));  // still needs a certificate
    EXPECT_EQ(to_string(TrustMode::verify_standard), "verify_standard");
}
