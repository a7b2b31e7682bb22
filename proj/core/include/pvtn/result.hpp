// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <string>
#include <utility>
#include <variant>

namespace pvtn {

enum class Err {
  KeyNotVisible,
  DecryptionFailure,
  SignatureInvalid,
  ReplayRejected,
  StaleDecision,
  DecisionMismatch,
  NotAManager,
  NotAuthorized,
  NotProvisioned,
  IssuerRevoked,
  Revoked,
  UpgradeNotApproved,
  ConflictDetected,
  RoleViolation,
  ScopeExceeded,
  SelfIssued,
  PathMismatch,
  DepthLimit,
  SizeQuota,
  ManagerQuota,
  PolicyDenied,
  Expired,
  LivenessFailed,
  NoParent,
  NotFound,
  DeliveryFailed,
  NonTermination,
  ModelViolation,
  ProviderError,
  ParseError,
  InvalidArgument,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::KeyNotVisible: return "KeyNotVisible";
    case Err::DecryptionFailure: return "DecryptionFailure";
    case Err::SignatureInvalid: return "SignatureInvalid";
    case Err::ReplayRejected: return "ReplayRejected";
    case Err::StaleDecision: return "StaleDecision";
    case Err::DecisionMismatch: return "DecisionMismatch";
    case Err::NotAManager: return "NotAManager";
    case Err::NotAuthorized: return "NotAuthorized";
    case Err::NotProvisioned: return "NotProvisioned";
    case Err::IssuerRevoked: return "IssuerRevoked";
    case Err::Revoked: return "Revoked";
    case Err::UpgradeNotApproved: return "UpgradeNotApproved";
    case Err::ConflictDetected: return "ConflictDetected";
    case Err::RoleViolation: return "RoleViolation";
    case Err::ScopeExceeded: return "ScopeExceeded";
    case Err::SelfIssued: return "SelfIssued";
    case Err::PathMismatch: return "PathMismatch";
    case Err::DepthLimit: return "DepthLimit";
    case Err::SizeQuota: return "SizeQuota";
    case Err::ManagerQuota: return "ManagerQuota";
    case Err::PolicyDenied: return "PolicyDenied";
    case Err::Expired: return "Expired";
    case Err::LivenessFailed: return "LivenessFailed";
    case Err::NoParent: return "NoParent";
    case Err::NotFound: return "NotFound";
    case Err::DeliveryFailed: return "DeliveryFailed";
    case Err::NonTermination: return "NonTermination";
    case Err::ModelViolation: return "ModelViolation";
    case Err::ProviderError: return "ProviderError";
    case Err::ParseError: return "ParseError";
    case Err::InvalidArgument: return "InvalidArgument";
  }
  return "UnknownErr";
}

struct Unit {};

// Minimal expected-style result. std::expected is C++23; this project targets
// C++20, so the handful of operations we need are spelled out here.
template <typename T = Unit>
class Result {
 public:
  Result(T value) : v_(std::move(value)) {}  // NOLINT implicit by design
  Result(Err e) : v_(e) {}                   // NOLINT implicit by design

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }

  const T& value() const {
    assert(ok());
    return std::get<T>(v_);
  }
  T& value() {
    assert(ok());
    return std::get<T>(v_);
  }
  T take() {
    assert(ok());
    return std::move(std::get<T>(v_));
  }
  Err error() const {
    assert(!ok());
    return std::get<Err>(v_);
  }
  const char* error_name() const { return err_name(error()); }

 private:
  std::variant<T, Err> v_;
};

using Status = Result<Unit>;

inline Status ok_status() { return Status(Unit{}); }

}  // namespace pvtn
