#pragma once

// Framed wire protocol shared by every BioNet link.
//
//   u32  length     bytes that follow this field (<= 1 MiB)
//   u8   version    0x01
//   u8   msg_type
//   4B   pin        ASCII digits
//   16B  txn_id
//   4B   sender_id  big-endian node id
//   ...  body       AEAD-sealed payload: u64 counter | ciphertext | 16B tag
//
// The routing header travels in clear so relays can route on the PIN, and is
// bound into the AEAD tag as associated data.

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bionet/audit.hpp"
#include "bionet/bytes.hpp"

namespace bionet::wire {

using NodeId = std::uint32_t;

inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::uint32_t kMaxFrameLength = 1U << 20;
inline constexpr std::size_t kHeaderLength = 1 + 1 + 4 + 16 + 4;
inline constexpr std::size_t kTagLength = 16;
inline constexpr std::size_t kCounterLength = 8;
inline constexpr std::size_t kSealOverhead = kCounterLength + kTagLength;
inline constexpr int kMaxShards = 10000;

/// Four ASCII digits.
class Pin {
 public:
  /// Throws `BadPin` unless `text` matches [0-9]{4}.
  static Pin parse(std::string_view text);
  static bool is_valid(std::string_view text);

  std::string_view str() const { return {digits_.data(), digits_.size()}; }
  int value() const;
  const std::array<char, 4>& digits() const { return digits_; }

  bool operator==(const Pin&) const = default;

 private:
  std::array<char, 4> digits_{'0', '0', '0', '0'};
};

/// Numeric PIN value modulo the shard count.
int route_pin(std::string_view pin, int shard_count);

enum class MsgType : std::uint8_t {
  PosAuthReq = 0x01,
  IdentifyReq = 0x02,
  AuthorizeReq = 0x03,
  AuthorizeResp = 0x04,
  Verdict = 0x05,
  AccountChoices = 0x06,
  AccountSelect = 0x07,
  EnrollReq = 0x08,
  EnrollAck = 0x09,
  FlagReq = 0x0A,
  FlagAck = 0x0B,
  ClusterIdentifyReq = 0x0C,
  ClusterIdentifyResp = 0x0D,
  Nack = 0x0E,
  AccountUpsert = 0x0F,
  Ack = 0x10,
  AuditQuery = 0x11,
  AuditReport = 0x12,
};

bool is_known_type(std::uint8_t t);
std::string_view to_string(MsgType t);

enum class Decision : std::uint8_t { Deny = 0, Allow = 1 };

enum class Reason : std::uint8_t {
  None = 0,
  NoMatch = 1,
  Ambiguous = 2,
  Unavailable = 3,
  UnknownAccount = 4,
  AccountClosed = 5,
  InsufficientFunds = 6,
  BadAmount = 7,
  Replay = 8,
  RoutingError = 9,
  Timeout = 10,
  BadSelection = 11,
  Flagged = 12,
};

std::string_view to_string(Decision d);
std::string_view to_string(Reason r);

// ---- payloads -------------------------------------------------------------

struct PosAuthReq {
  std::int64_t amount = 0;  // minor units
  MerchantId merchant{};
  Bytes template_bytes;  // .biot
  bool operator==(const PosAuthReq&) const = default;
};

struct IdentifyReq {
  std::int64_t amount = 0;
  MerchantId merchant{};
  Bytes template_bytes;
  bool operator==(const IdentifyReq&) const = default;
};

struct AuthorizeReq {
  IdentityId identity{};
  AccountRef account{};
  std::int64_t amount = 0;
  MerchantId merchant{};
  bool operator==(const AuthorizeReq&) const = default;
};

struct AuthorizeResp {
  Decision decision = Decision::Deny;
  Reason reason = Reason::None;
  bool operator==(const AuthorizeResp&) const = default;
};

struct Verdict {
  Decision decision = Decision::Deny;
  Reason reason = Reason::None;
  bool operator==(const Verdict&) const = default;
};

struct AccountChoices {
  std::vector<AccountRef> accounts;
  bool operator==(const AccountChoices&) const = default;
};

struct AccountSelect {
  AccountRef account{};
  bool operator==(const AccountSelect&) const = default;
};

struct EnrollReq {
  IdentityId identity{};
  Bytes template_bytes;
  BankId issuer{};
  BankId branch{};
  std::vector<AccountRef> accounts;
  bool operator==(const EnrollReq&) const = default;
};

struct EnrollAck {
  std::uint64_t store_count = 0;
  bool operator==(const EnrollAck&) const = default;
};

struct FlagReq {
  IdentityId identity{};
  bool flag = true;
  bool operator==(const FlagReq&) const = default;
};

struct FlagAck {
  bool operator==(const FlagAck&) const = default;
};

struct ScoredIdentity {
  IdentityId identity{};
  double score = 0;  // carried as IEEE-754 bits so merges stay bit-exact
  bool operator==(const ScoredIdentity&) const = default;
};

struct ClusterIdentifyReq {
  Bytes template_bytes;
  bool operator==(const ClusterIdentifyReq&) const = default;
};

struct ClusterIdentifyResp {
  std::uint64_t scanned = 0;
  std::uint64_t skipped = 0;
  std::vector<ScoredIdentity> top;  // at most two
  bool operator==(const ClusterIdentifyResp&) const = default;
};

/// Negative acknowledgement carrying an `ErrorCode`.
struct Nack {
  std::uint8_t code = 0;
  std::string detail;
  bool operator==(const Nack&) const = default;
};

enum class AccountStatus : std::uint8_t { Open = 0, Closed = 1 };

struct AccountUpsert {
  AccountRef account{};
  std::int64_t balance = 0;
  AccountStatus status = AccountStatus::Open;
  bool operator==(const AccountUpsert&) const = default;
};

struct Ack {
  bool operator==(const Ack&) const = default;
};

struct AuditQuery {
  AuditFilter filter;
  bool operator==(const AuditQuery& o) const {
    return filter.kind == o.filter.kind && filter.from_ms == o.filter.from_ms && filter.to_ms == o.filter.to_ms;
  }
};

struct AuditReport {
  std::vector<AuditEvent> events;
  bool operator==(const AuditReport&) const = default;
};

using Message = std::variant<PosAuthReq, IdentifyReq, AuthorizeReq, AuthorizeResp, Verdict, AccountChoices,
                             AccountSelect, EnrollReq, EnrollAck, FlagReq, FlagAck, ClusterIdentifyReq,
                             ClusterIdentifyResp, Nack, AccountUpsert, Ack, AuditQuery, AuditReport>;

MsgType type_of(const Message& m);
Bytes encode_payload(const Message& m);
/// Throws `UnknownType`, `Truncated` or `Malformed`.
Message decode_payload(MsgType type, ByteView payload);

// ---- frames ---------------------------------------------------------------

struct RoutingHeader {
  Pin pin;
  TxnId txn_id{};
  NodeId sender = 0;
  bool operator==(const RoutingHeader&) const = default;
};

struct Frame {
  std::uint8_t version = kVersion;
  MsgType type = MsgType::Ack;
  RoutingHeader header;
  Bytes body;  // sealed
  bool operator==(const Frame&) const = default;
};

/// version | msg_type | pin | txn_id | sender_id, i.e. the associated data.
Bytes header_bytes(std::uint8_t version, MsgType type, const RoutingHeader& h);

Bytes encode_frame(const Frame& f);

struct NeedMoreData {};

struct DecodedFrame {
  Frame frame;
  std::size_t consumed = 0;
};

/// Decodes the first frame in `buf`. An oversize length is rejected as soon as
/// the length field is available.
std::variant<DecodedFrame, NeedMoreData> decode_frame(ByteView buf);

/// Incremental decoder for stream transports.
class FrameDecoder {
 public:
  void feed(ByteView data);
  /// Next complete frame, or nullopt when more bytes are needed.
  std::optional<Frame> next();
  std::size_t buffered() const { return buf_.size(); }

 private:
  Bytes buf_;
};

// ---- envelope -------------------------------------------------------------

using KeyMaterial = std::array<std::uint8_t, 32>;

KeyMaterial key_from_hex(std::string_view hex);

/// One endpoint's sending state on a link: the shared key, this endpoint's
/// sender id and a monotone nonce counter.
class LinkKey {
 public:
  LinkKey(const KeyMaterial& key, NodeId sender, std::uint64_t first_counter = 0)
      : key_(key), sender_(sender), counter_(first_counter) {}
  LinkKey(const LinkKey&) = delete;
  LinkKey& operator=(const LinkKey&) = delete;

  const KeyMaterial& key() const { return key_; }
  NodeId sender() const { return sender_; }
  std::uint64_t peek_counter() const { return counter_.load(); }
  /// Atomically reserves the next counter; throws `CounterExhausted` at 2^64 - 1.
  std::uint64_t reserve_counter();

 private:
  KeyMaterial key_;
  NodeId sender_;
  std::atomic<std::uint64_t> counter_;
};

/// 12-byte GCM nonce: sender id followed by the counter, both big-endian.
std::array<std::uint8_t, 12> make_nonce(NodeId sender, std::uint64_t counter);

/// AES-256-GCM. Output is counter | ciphertext | tag.
Bytes seal(ByteView plaintext, LinkKey& key, ByteView aad);
/// `sender` is the id of the endpoint that sealed. Throws `AuthFail`.
Bytes open(ByteView sealed, const KeyMaterial& key, NodeId sender, ByteView aad);

// ---- secured endpoint -------------------------------------------------------

enum class Role : std::uint8_t { Pos, Acquirer, Shard, Member, Issuer, Bank, Authority, Admin };

std::string_view to_string(Role r);

struct Envelope {
  MsgType type = MsgType::Ack;
  RoutingHeader header;
  Message message;
  Role peer_role = Role::Admin;
};

/// Link keys of one node, indexed by peer id.
class Keyring {
 public:
  explicit Keyring(NodeId self) : self_(self) {}

  NodeId self() const { return self_; }
  void add_peer(NodeId peer, Role role, const KeyMaterial& key);
  bool has_peer(NodeId peer) const { return peers_.count(peer) != 0; }
  Role role_of(NodeId peer) const;

  /// Seals `msg` for `peer` and frames it.
  Bytes make_frame(NodeId peer, const Pin& pin, const TxnId& txn, const Message& msg);
  /// Parses, authenticates and decodes a frame from any configured peer.
  /// Throws `UnknownPeer`, `AuthFail` or a framing error.
  Envelope open_frame(ByteView frame_bytes) const;

 private:
  struct Peer {
    Role role;
    std::unique_ptr<LinkKey> key;
  };
  NodeId self_;
  std::map<NodeId, Peer> peers_;
};

}  // namespace bionet::wire
