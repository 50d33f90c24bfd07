#include "quictun/security/trust.hpp"

#include <arpa/inet.h>

#include <openssl/err.h>
#include <openssl/x509.h>
#include <openssl/x509_vfy.h>

#include "quictun/common/log.hpp"

namespace quictun::security {

std::string_view to_string(TrustMode mode)
{
    switch (mode) {
    case TrustMode::verify_standard: return "verify_standard";
    case TrustMode::insecure_accept_any: return "insecure_accept_any";
    }
    return "unknown";
}

namespace {

struct X509Deleter {
    void operator()(X509* x) const { X509_free(x); }
};
using X509Ptr = std::unique_ptr<X509, X509Deleter>;

X509Ptr parse_der(const Bytes& der)
{
    const unsigned char* p = der.data();
    return X509Ptr(d2i_X509(nullptr, &p, static_cast<long>(der.size())));
}

bool is_ip_literal(std::string_view name)
{
    std::string s(name);
    unsigned char tmp[16];
    return inet_pton(AF_INET, s.c_str(), tmp) == 1 || inet_pton(AF_INET6, s.c_str(), tmp) == 1;
}

class StandardVerifier final : public CertificateVerifier {
public:
    explicit StandardVerifier(std::vector<Bytes> pinned) : pinned_(std::move(pinned)) {}

    std::optional<std::string> verify(std::span<const Bytes> chain_der, std::string_view server_name) const override
    {
        if (chain_der.empty()) return "peer presented no certificate";
        std::unique_ptr<X509_STORE, void (*)(X509_STORE*)> store(X509_STORE_new(), X509_STORE_free);
        if (pinned_.empty()) {
            X509_STORE_set_default_paths(store.get());
        } else {
            for (const auto& der : pinned_) {
                auto root = parse_der(der);
                if (!root) return "malformed pinned root";
                X509_STORE_add_cert(store.get(), root.get());
            }
            // Pinned self-signed leaves act as trust anchors on their own.
            X509_STORE_set_flags(store.get(), X509_V_FLAG_PARTIAL_CHAIN);
        }

        auto leaf = parse_der(chain_der.front());
        if (!leaf) return "malformed peer certificate";
        std::unique_ptr<STACK_OF(X509), void (*)(STACK_OF(X509)*)> intermediates(
            sk_X509_new_null(), [](STACK_OF(X509)* s) { sk_X509_pop_free(s, X509_free); });
        for (std::size_t i = 1; i < chain_der.size(); ++i) {
            if (auto c = parse_der(chain_der[i])) sk_X509_push(intermediates.get(), c.release());
        }

        std::unique_ptr<X509_STORE_CTX, void (*)(X509_STORE_CTX*)> ctx(X509_STORE_CTX_new(), X509_STORE_CTX_free);
        if (X509_STORE_CTX_init(ctx.get(), store.get(), leaf.get(), intermediates.get()) != 1) {
            return "verifier initialisation failed";
        }
        auto* param = X509_STORE_CTX_get0_param(ctx.get());
        X509_VERIFY_PARAM_set_purpose(param, X509_PURPOSE_SSL_SERVER);
        std::string name(server_name);
        if (!name.empty()) {
            if (is_ip_literal(name)) {
                X509_VERIFY_PARAM_set1_ip_asc(param, name.c_str());
            } else {
                X509_VERIFY_PARAM_set1_host(param, name.c_str(), name.size());
            }
        }
        if (X509_verify_cert(ctx.get()) != 1) {
            int err = X509_STORE_CTX_get_error(ctx.get());
            ERR_clear_error();
            return std::string("certificate verify failed: ") + X509_verify_cert_error_string(err);
        }
        return std::nullopt;
    }

    TrustMode mode() const override { return TrustMode::verify_standard; }

private:
    std::vector<Bytes> pinned_;
};

class AcceptAnyVerifier final : public CertificateVerifier {
public:
    std::optional<std::string> verify(std::span<const Bytes> chain_der, std::string_view) const override
    {
        if (chain_der.empty()) return "peer presented no certificate";
        return std::nullopt;
    }
    TrustMode mode() const override { return TrustMode::insecure_accept_any; }
};

}  // namespace

std::shared_ptr<const CertificateVerifier> build_trust(const TrustPolicy& policy)
{
    switch (policy.mode) {
    case TrustMode::verify_standard:
        return std::make_shared<StandardVerifier>(policy.pinned_roots_der);
    case TrustMode::insecure_accept_any:
        log().warn("*** INSECURE: server certificate verification is DISABLED (insecure_accept_any); "
                   "use only for testing ***");
        return std::make_shared<AcceptAnyVerifier>();
    }
    throw std::invalid_argument("unknown trust mode");
}

}  // namespace quictun::security
