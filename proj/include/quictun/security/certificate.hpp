#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "quictun/common/bytes.hpp"
#include "quictun/quic/crypto.hpp"

namespace quictun::security {

// A leaf certificate (plus optional intermediates) and its private key, DER encoded.
struct CertificateMaterial {
    std::vector<Bytes> chain_der;  // leaf first
    Bytes private_key_der;         // PKCS#8
    std::vector<std::string> subject_names;

    // Throws std::invalid_argument if the key does not match the leaf or names are empty.
    void validate() const;
    quic::EvpPkeyPtr private_key() const;
    const Bytes& leaf() const { return chain_der.front(); }
};

// ECDSA P-256 leaf valid for [now - 1h, now + 90d]. Entries that parse as IPv4/IPv6
// literals become IP SANs, everything else a DNS SAN.
CertificateMaterial generate_self_signed(const std::vector<std::string>& subject_names);

// Loads a certificate chain and private key. Both PEM and raw DER are accepted.
CertificateMaterial load_certificate_files(const std::filesystem::path& cert_file,
                                           const std::filesystem::path& key_file);

// PEM-encodes the leaf certificate / private key (for writing operator files).
std::string leaf_to_pem(const CertificateMaterial& material);
std::string private_key_to_pem(const CertificateMaterial& material);

// DNS and IP subject-alternative names of a DER certificate, IPs in text form.
std::vector<std::string> subject_alt_names(ByteView certificate_der);

}  // namespace quictun::security
