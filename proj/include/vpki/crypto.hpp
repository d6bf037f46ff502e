#pragma once

#include <openssl/core_names.h>
#include <openssl/ec.h>
#include <openssl/ecdsa.h>
#include <openssl/evp.h>
#include <openssl/param_build.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <array>
#include <compare>
#include <cstring>
#include <memory>
#include <span>
#include <string>

#include "vpki/bytes.hpp"
#include "vpki/errors.hpp"

namespace vpki {

// All asymmetric operations use ECDSA over P-256 with SHA-256. Public keys
// travel as 65-byte uncompressed points, private keys as 32-byte scalars and
// signatures as fixed 64-byte r||s — one canonical length for every field.
inline constexpr size_t kPublicKeySize = 65;
inline constexpr size_t kPrivateKeySize = 32;
inline constexpr size_t kSignatureSize = 64;
inline constexpr size_t kDigestSize = 32;
inline constexpr size_t kTokenSize = 16;
inline constexpr const char *kCurveName = "prime256v1";

struct Digest {
  std::array<uint8_t, kDigestSize> bytes{};

  auto operator<=>(const Digest &) const = default;
  std::string hex() const { return to_hex(bytes); }

  static Digest from_hex(const std::string &h) {
    Bytes raw = vpki::from_hex(h);
    if (raw.size() != kDigestSize)
      throw DecodeError("digest", "expected 32 bytes");
    Digest d;
    std::memcpy(d.bytes.data(), raw.data(), kDigestSize);
    return d;
  }
};

// 128-bit random value used for serials, nonces and commitment openings.
struct RandomToken {
  std::array<uint8_t, kTokenSize> bytes{};

  auto operator<=>(const RandomToken &) const = default;
  std::string hex() const { return to_hex(bytes); }

  static RandomToken from_hex(const std::string &h) {
    Bytes raw = vpki::from_hex(h);
    if (raw.size() != kTokenSize)
      throw DecodeError("token", "expected 16 bytes");
    RandomToken t;
    std::memcpy(t.bytes.data(), raw.data(), kTokenSize);
    return t;
  }

  // Big-endian increment; responses echo the request nonce plus one.
  RandomToken next() const {
    RandomToken out = *this;
    for (int i = kTokenSize - 1; i >= 0; --i) {
      if (++out.bytes[i] != 0) break;
    }
    return out;
  }
};

struct Signature {
  std::array<uint8_t, kSignatureSize> bytes{};
  auto operator<=>(const Signature &) const = default;
  std::string hex() const { return to_hex(bytes); }
};

struct DigestHash {
  size_t operator()(const Digest &d) const {
    size_t v;
    std::memcpy(&v, d.bytes.data(), sizeof(v));
    return v;
  }
};

struct TokenHash {
  size_t operator()(const RandomToken &t) const {
    size_t v;
    std::memcpy(&v, t.bytes.data(), sizeof(v));
    return v;
  }
};

struct KeyPair {
  Bytes public_key;   // uncompressed SEC1 point, 65 bytes
  Bytes private_key;  // big-endian scalar, 32 bytes
};

namespace detail {

struct PkeyDeleter {
  void operator()(EVP_PKEY *p) const { EVP_PKEY_free(p); }
};
struct PkeyCtxDeleter {
  void operator()(EVP_PKEY_CTX *p) const { EVP_PKEY_CTX_free(p); }
};
struct MdCtxDeleter {
  void operator()(EVP_MD_CTX *p) const { EVP_MD_CTX_free(p); }
};
struct ParamBldDeleter {
  void operator()(OSSL_PARAM_BLD *p) const { OSSL_PARAM_BLD_free(p); }
};
struct ParamDeleter {
  void operator()(OSSL_PARAM *p) const { OSSL_PARAM_free(p); }
};
struct BnDeleter {
  void operator()(BIGNUM *p) const { BN_free(p); }
};
struct EcdsaSigDeleter {
  void operator()(ECDSA_SIG *p) const { ECDSA_SIG_free(p); }
};

using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

// Rebuild an EVP_PKEY from the raw private scalar.
inline PkeyPtr import_private(std::span<const uint8_t> priv) {
  if (priv.size() != kPrivateKeySize) return nullptr;
  std::unique_ptr<BIGNUM, BnDeleter> bn(
      BN_bin2bn(priv.data(), static_cast<int>(priv.size()), nullptr));
  if (!bn) return nullptr;
  std::unique_ptr<OSSL_PARAM_BLD, ParamBldDeleter> bld(OSSL_PARAM_BLD_new());
  if (!bld ||
      !OSSL_PARAM_BLD_push_utf8_string(bld.get(), OSSL_PKEY_PARAM_GROUP_NAME,
                                       kCurveName, 0) ||
      !OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_PRIV_KEY, bn.get()))
    return nullptr;
  std::unique_ptr<OSSL_PARAM, ParamDeleter> params(
      OSSL_PARAM_BLD_to_param(bld.get()));
  if (!params) return nullptr;
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr));
  EVP_PKEY *raw = nullptr;
  if (!ctx || EVP_PKEY_fromdata_init(ctx.get()) <= 0 ||
      EVP_PKEY_fromdata(ctx.get(), &raw, EVP_PKEY_KEYPAIR, params.get()) <= 0)
    return nullptr;
  return PkeyPtr(raw);
}

// Rebuild an EVP_PKEY from the raw uncompressed public point.
inline PkeyPtr import_public(std::span<const uint8_t> pub) {
  if (pub.size() != kPublicKeySize || pub[0] != 0x04) return nullptr;
  std::unique_ptr<OSSL_PARAM_BLD, ParamBldDeleter> bld(OSSL_PARAM_BLD_new());
  if (!bld ||
      !OSSL_PARAM_BLD_push_utf8_string(bld.get(), OSSL_PKEY_PARAM_GROUP_NAME,
                                       kCurveName, 0) ||
      !OSSL_PARAM_BLD_push_octet_string(bld.get(), OSSL_PKEY_PARAM_PUB_KEY,
                                        pub.data(), pub.size()))
    return nullptr;
  std::unique_ptr<OSSL_PARAM, ParamDeleter> params(
      OSSL_PARAM_BLD_to_param(bld.get()));
  if (!params) return nullptr;
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr));
  EVP_PKEY *raw = nullptr;
  if (!ctx || EVP_PKEY_fromdata_init(ctx.get()) <= 0 ||
      EVP_PKEY_fromdata(ctx.get(), &raw, EVP_PKEY_PUBLIC_KEY, params.get()) <=
          0)
    return nullptr;
  return PkeyPtr(raw);
}

}  // namespace detail

inline Bytes random_bytes(size_t n) {
  Bytes out(n);
  if (n > 0 && RAND_bytes(out.data(), static_cast<int>(n)) != 1)
    throw Error(Errc::internal, "system entropy source failed");
  return out;
}

inline RandomToken random_token() {
  RandomToken t;
  if (RAND_bytes(t.bytes.data(), kTokenSize) != 1)
    throw Error(Errc::internal, "system entropy source failed");
  return t;
}

inline Digest sha256(std::span<const uint8_t> data) {
  Digest d;
  unsigned int len = 0;
  detail::MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), d.bytes.data(), &len) != 1 ||
      len != kDigestSize)
    throw Error(Errc::internal, "digest computation failed");
  return d;
}

// HMAC-SHA256 built from two hash passes (RFC 2104); used for the stateless
// request-gate token chains.
inline Digest hmac_sha256(std::span<const uint8_t> key,
                          std::span<const uint8_t> msg) {
  constexpr size_t kBlock = 64;
  std::array<uint8_t, kBlock> k{};
  if (key.size() > kBlock) {
    Digest kd = sha256(key);
    std::memcpy(k.data(), kd.bytes.data(), kDigestSize);
  } else {
    std::memcpy(k.data(), key.data(), key.size());
  }
  Bytes inner;
  inner.reserve(kBlock + msg.size());
  for (size_t i = 0; i < kBlock; ++i) inner.push_back(k[i] ^ 0x36);
  inner.insert(inner.end(), msg.begin(), msg.end());
  Digest inner_hash = sha256(inner);

  Bytes outer;
  outer.reserve(kBlock + kDigestSize);
  for (size_t i = 0; i < kBlock; ++i) outer.push_back(k[i] ^ 0x5c);
  outer.insert(outer.end(), inner_hash.bytes.begin(), inner_hash.bytes.end());
  return sha256(outer);
}

inline KeyPair generate_keypair() {
  detail::PkeyPtr pkey(
      EVP_PKEY_Q_keygen(nullptr, nullptr, "EC", kCurveName));
  if (!pkey) throw Error(Errc::internal, "key generation failed");

  KeyPair kp;
  kp.public_key.resize(kPublicKeySize);
  size_t publen = 0;
  // ENCODED_PUBLIC_KEY yields the uncompressed point; the plain PUB_KEY
  // param would hand back the compressed form.
  if (EVP_PKEY_get_octet_string_param(
          pkey.get(), OSSL_PKEY_PARAM_ENCODED_PUBLIC_KEY, kp.public_key.data(),
          kPublicKeySize, &publen) != 1 ||
      publen != kPublicKeySize)
    throw Error(Errc::internal, "public key export failed");

  BIGNUM *priv_bn = nullptr;
  if (EVP_PKEY_get_bn_param(pkey.get(), OSSL_PKEY_PARAM_PRIV_KEY, &priv_bn) !=
      1)
    throw Error(Errc::internal, "private key export failed");
  std::unique_ptr<BIGNUM, detail::BnDeleter> bn(priv_bn);
  kp.private_key.resize(kPrivateKeySize);
  if (BN_bn2binpad(bn.get(), kp.private_key.data(), kPrivateKeySize) !=
      static_cast<int>(kPrivateKeySize))
    throw Error(Errc::internal, "private key export failed");
  return kp;
}

// Sign a message; the DER output of the library is repacked into the fixed
// 64-byte r||s form used on the wire.
inline Signature sign(std::span<const uint8_t> private_key,
                      std::span<const uint8_t> message) {
  detail::PkeyPtr pkey = detail::import_private(private_key);
  if (!pkey) throw Error(Errc::invalid_argument, "bad private key");

  detail::MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestSignInit_ex(ctx.get(), nullptr, "SHA256", nullptr,
                                    nullptr, pkey.get(), nullptr) != 1)
    throw Error(Errc::internal, "sign init failed");

  size_t der_len = 0;
  if (EVP_DigestSign(ctx.get(), nullptr, &der_len, message.data(),
                     message.size()) != 1)
    throw Error(Errc::internal, "sign sizing failed");
  Bytes der(der_len);
  if (EVP_DigestSign(ctx.get(), der.data(), &der_len, message.data(),
                     message.size()) != 1)
    throw Error(Errc::internal, "sign failed");
  der.resize(der_len);

  const uint8_t *p = der.data();
  std::unique_ptr<ECDSA_SIG, detail::EcdsaSigDeleter> sig(
      d2i_ECDSA_SIG(nullptr, &p, static_cast<long>(der.size())));
  if (!sig) throw Error(Errc::internal, "signature repack failed");
  const BIGNUM *r = nullptr, *s = nullptr;
  ECDSA_SIG_get0(sig.get(), &r, &s);

  Signature out;
  if (BN_bn2binpad(r, out.bytes.data(), 32) != 32 ||
      BN_bn2binpad(s, out.bytes.data() + 32, 32) != 32)
    throw Error(Errc::internal, "signature repack failed");
  return out;
}

// Returns false (never throws) on a bad key, bad signature or mismatch, so
// callers can treat all verification failures uniformly.
inline bool verify(std::span<const uint8_t> public_key,
                   std::span<const uint8_t> message,
                   const Signature &signature) noexcept {
  detail::PkeyPtr pkey = detail::import_public(public_key);
  if (!pkey) return false;

  BIGNUM *r = BN_bin2bn(signature.bytes.data(), 32, nullptr);
  BIGNUM *s = BN_bin2bn(signature.bytes.data() + 32, 32, nullptr);
  std::unique_ptr<ECDSA_SIG, detail::EcdsaSigDeleter> sig(ECDSA_SIG_new());
  if (!r || !s || !sig || ECDSA_SIG_set0(sig.get(), r, s) != 1) {
    BN_free(r);
    BN_free(s);
    return false;
  }
  int der_len = i2d_ECDSA_SIG(sig.get(), nullptr);
  if (der_len <= 0) return false;
  Bytes der(static_cast<size_t>(der_len));
  uint8_t *out = der.data();
  if (i2d_ECDSA_SIG(sig.get(), &out) != der_len) return false;

  detail::MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestVerifyInit_ex(ctx.get(), nullptr, "SHA256", nullptr,
                                      nullptr, pkey.get(), nullptr) != 1)
    return false;
  return EVP_DigestVerify(ctx.get(), der.data(), der.size(), message.data(),
                          message.size()) == 1;
}

// Binding digest carried inside a ticket: commits to the holder's long-term
// certificate, the ticket validity interval and a per-ticket random value.
// Only the issuing service (which knows the certificate and the random value)
// can recompute it; to everyone else it is opaque.
inline Digest compute_ticket_binding(std::span<const uint8_t> ltc_bytes,
                                     int64_t t_s, int64_t t_e,
                                     const RandomToken &rnd) {
  if (t_s >= t_e)
    throw Error(Errc::invalid_argument, "binding interval is empty");
  ByteWriter w;
  w.blob(ltc_bytes);
  w.timestamp(t_s);
  w.timestamp(t_e);
  w.raw(rnd.bytes);
  return sha256(w.peek());
}

// Binding digest carried inside a pseudonym: chains back to the ticket's
// binding digest, and commits to the pseudonym key and its validity slot.
inline Digest compute_pseudonym_binding(const Digest &ticket_binding,
                                        std::span<const uint8_t> pseudonym_key,
                                        int64_t t_s, int64_t t_e,
                                        const RandomToken &rnd) {
  if (t_s >= t_e)
    throw Error(Errc::invalid_argument, "binding interval is empty");
  ByteWriter w;
  w.raw(ticket_binding.bytes);
  w.blob(pseudonym_key);
  w.timestamp(t_s);
  w.timestamp(t_e);
  w.raw(rnd.bytes);
  return sha256(w.peek());
}

}  // namespace vpki
