#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "bionet/bytes.hpp"

namespace bionet {

enum class AuditKind : std::uint8_t {
  Match = 0,
  NoMatch = 1,
  Ambiguous = 2,
  FlagAlert = 3,
  Enroll = 4,
  DenyForwarded = 5,
};

std::string_view to_string(AuditKind kind);

struct AuditEvent {
  std::int64_t timestamp_ms = 0;
  TxnId txn_id{};
  AuditKind kind = AuditKind::Match;
  std::optional<IdentityId> identity;
  std::optional<MerchantId> merchant;
  std::string detail;

  bool operator==(const AuditEvent&) const = default;

  bool is_identification() const {
    return kind == AuditKind::Match || kind == AuditKind::NoMatch || kind == AuditKind::Ambiguous;
  }
};

struct AuditFilter {
  std::optional<AuditKind> kind;
  std::int64_t from_ms = 0;
  std::int64_t to_ms = INT64_MAX;

  bool accepts(const AuditEvent& e) const {
    return (!kind || e.kind == *kind) && e.timestamp_ms >= from_ms && e.timestamp_ms <= to_ms;
  }
};

}  // namespace bionet
