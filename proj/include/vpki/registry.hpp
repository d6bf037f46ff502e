#pragma once

#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "vpki/bytes.hpp"
#include "vpki/crypto.hpp"
#include "vpki/errors.hpp"

namespace vpki {

enum class AuthorityKind { ltca, pca, ra };

inline const char *authority_kind_name(AuthorityKind k) {
  switch (k) {
    case AuthorityKind::ltca: return "ltca";
    case AuthorityKind::pca: return "pca";
    case AuthorityKind::ra: return "ra";
  }
  return "?";
}

inline AuthorityKind parse_authority_kind(const std::string &s) {
  if (s == "ltca") return AuthorityKind::ltca;
  if (s == "pca") return AuthorityKind::pca;
  if (s == "ra") return AuthorityKind::ra;
  throw Error(Errc::invalid_argument, "unknown authority kind '" + s + "'");
}

struct AuthorityInfo {
  std::string id;
  AuthorityKind kind = AuthorityKind::ltca;
  std::string domain;    // trust domain the authority belongs to
  std::string endpoint;  // base URL when reached over a socket
  Bytes public_key;
};

// Static directory of authority identities, public keys and endpoints: the
// trust configuration every party loads at startup instead of querying a
// directory service.
class Registry {
public:
  void add(AuthorityInfo info) {
    if (info.id.empty())
      throw Error(Errc::invalid_argument, "authority id must not be empty");
    entries_[info.id] = std::move(info);
  }

  const AuthorityInfo &get(const std::string &id) const {
    auto it = entries_.find(id);
    if (it == entries_.end())
      throw Error(Errc::not_found, "authority '" + id + "' not in registry");
    return it->second;
  }

  const AuthorityInfo *maybe(const std::string &id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  bool is_trusted(const std::string &id, AuthorityKind kind) const {
    const AuthorityInfo *info = maybe(id);
    return info && info->kind == kind;
  }

  const Bytes &public_key_of(const std::string &id) const {
    return get(id).public_key;
  }

  const std::map<std::string, AuthorityInfo> &entries() const {
    return entries_;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &[id, info] : entries_) {
      arr.push_back({{"id", info.id},
                     {"kind", authority_kind_name(info.kind)},
                     {"domain", info.domain},
                     {"endpoint", info.endpoint},
                     {"public_key", to_hex(info.public_key)}});
    }
    return {{"authorities", arr}};
  }

  static Registry from_json(const nlohmann::json &j) {
    Registry r;
    for (const auto &e : j.at("authorities")) {
      AuthorityInfo info;
      info.id = e.at("id").get<std::string>();
      info.kind = parse_authority_kind(e.at("kind").get<std::string>());
      info.domain = e.value("domain", "");
      info.endpoint = e.value("endpoint", "");
      info.public_key = from_hex(e.at("public_key").get<std::string>());
      r.add(std::move(info));
    }
    return r;
  }

  void save(const std::string &path) const {
    std::ofstream out(path);
    if (!out)
      throw Error(Errc::unavailable, "cannot write registry to " + path);
    out << to_json().dump(2) << "\n";
  }

  static Registry load(const std::string &path) {
    std::ifstream in(path);
    if (!in)
      throw Error(Errc::unavailable, "cannot read registry from " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

private:
  std::map<std::string, AuthorityInfo> entries_;
};

}  // namespace vpki
