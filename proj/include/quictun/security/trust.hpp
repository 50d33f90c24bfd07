#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quictun/common/bytes.hpp"

namespace quictun::security {

enum class TrustMode { verify_standard, insecure_accept_any };

std::string_view to_string(TrustMode mode);

struct TrustPolicy {
    TrustMode mode = TrustMode::verify_standard;
    // When non-empty these replace the system roots.
    std::vector<Bytes> pinned_roots_der;
};

// Checks a peer's certificate chain (leaf first) against a server name.
class CertificateVerifier {
public:
    virtual ~CertificateVerifier() = default;
    // Returns an error description, or nullopt if the chain is acceptable.
    virtual std::optional<std::string> verify(std::span<const Bytes> chain_der, std::string_view server_name) const = 0;
    virtual TrustMode mode() const = 0;
};

std::shared_ptr<const CertificateVerifier> build_trust(const TrustPolicy& policy);

}  // namespace quictun::security
