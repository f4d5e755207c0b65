#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rehabcoach::tls {

class TlsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// PEM-encoded certificate chain and private key.
struct Material {
  std::string certificate_pem;
  std::string private_key_pem;
};

/// Self-signed P-256 certificate for `host` (subject CN and DNS SAN, plus
/// IP SAN 127.0.0.1), valid for `days`.
Material self_signed(std::string_view host = "localhost", int days = 365);

Material load_material(const std::string& cert_file, const std::string& key_file);

/// Lower-case hex HMAC-SHA256 of the user id.
std::string bearer_token(std::string_view secret, std::string_view user_id);
/// Constant-time comparison against bearer_token().
bool token_valid(std::string_view secret, std::string_view user_id, std::string_view token);

/// 32 random bytes, hex encoded.
std::string random_secret();

}  // namespace rehabcoach::tls
