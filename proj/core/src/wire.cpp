#include "bionet/wire.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <limits>

namespace bionet::wire {
namespace {

void write_amount(ByteWriter& w, std::int64_t v) { w.u64(static_cast<std::uint64_t>(v)); }
std::int64_t read_amount(ByteReader& r) { return static_cast<std::int64_t>(r.u64()); }

void write_refs(ByteWriter& w, const std::vector<AccountRef>& refs) {
  ByteWriter inner;
  for (const auto& ref : refs) inner.id(ref);
  w.var16(inner.bytes());
}

std::vector<AccountRef> read_refs(ByteReader& r) {
  auto raw = r.var16();
  if (raw.size() % 16 != 0) throw Error(ErrorCode::Malformed, "account list not a multiple of 16 bytes");
  ByteReader inner(raw);
  std::vector<AccountRef> refs;
  while (!inner.done()) refs.push_back(inner.id<16>());
  return refs;
}

Decision read_decision(ByteReader& r) {
  auto d = r.u8();
  if (d > 1) throw Error(ErrorCode::Malformed, "bad decision byte");
  return static_cast<Decision>(d);
}

Reason read_reason(ByteReader& r) {
  auto v = r.u8();
  if (v > static_cast<std::uint8_t>(Reason::Flagged)) throw Error(ErrorCode::Malformed, "bad reason byte");
  return static_cast<Reason>(v);
}

void write_event(ByteWriter& w, const AuditEvent& e) {
  w.u64(static_cast<std::uint64_t>(e.timestamp_ms));
  w.id(e.txn_id);
  w.u8(static_cast<std::uint8_t>(e.kind));
  w.u8(e.identity ? 1 : 0);
  if (e.identity) w.id(*e.identity);
  w.u8(e.merchant ? 1 : 0);
  if (e.merchant) w.id(*e.merchant);
  w.var16(ByteView(reinterpret_cast<const std::uint8_t*>(e.detail.data()), e.detail.size()));
}

AuditEvent read_event(ByteReader& r) {
  AuditEvent e;
  e.timestamp_ms = static_cast<std::int64_t>(r.u64());
  e.txn_id = r.id<16>();
  auto kind = r.u8();
  if (kind > static_cast<std::uint8_t>(AuditKind::DenyForwarded)) throw Error(ErrorCode::Malformed, "bad audit kind");
  e.kind = static_cast<AuditKind>(kind);
  if (r.u8()) e.identity = r.id<16>();
  if (r.u8()) e.merchant = r.id<8>();
  auto detail = r.var16();
  e.detail.assign(detail.begin(), detail.end());
  return e;
}

struct PayloadWriter {
  ByteWriter& w;

  void operator()(const PosAuthReq& m) {
    write_amount(w, m.amount);
    w.id(m.merchant);
    w.var16(m.template_bytes);
  }
  void operator()(const IdentifyReq& m) {
    write_amount(w, m.amount);
    w.id(m.merchant);
    w.var16(m.template_bytes);
  }
  void operator()(const AuthorizeReq& m) {
    w.id(m.identity);
    w.id(m.account);
    write_amount(w, m.amount);
    w.id(m.merchant);
  }
  void operator()(const AuthorizeResp& m) {
    w.u8(static_cast<std::uint8_t>(m.decision));
    w.u8(static_cast<std::uint8_t>(m.reason));
  }
  void operator()(const Verdict& m) {
    w.u8(static_cast<std::uint8_t>(m.decision));
    w.u8(static_cast<std::uint8_t>(m.reason));
  }
  void operator()(const AccountChoices& m) {
    if (m.accounts.size() > 255) throw Error(ErrorCode::InvalidArgument, "too many account choices");
    w.u8(static_cast<std::uint8_t>(m.accounts.size()));
    for (const auto& ref : m.accounts) w.id(ref);
  }
  void operator()(const AccountSelect& m) { w.id(m.account); }
  void operator()(const EnrollReq& m) {
    w.id(m.identity);
    w.var16(m.template_bytes);
    w.id(m.issuer);
    w.id(m.branch);
    write_refs(w, m.accounts);
  }
  void operator()(const EnrollAck& m) { w.u64(m.store_count); }
  void operator()(const FlagReq& m) {
    w.id(m.identity);
    w.u8(m.flag ? 1 : 0);
  }
  void operator()(const FlagAck&) {}
  void operator()(const ClusterIdentifyReq& m) { w.var16(m.template_bytes); }
  void operator()(const ClusterIdentifyResp& m) {
    if (m.top.size() > 2) throw Error(ErrorCode::InvalidArgument, "cluster response carries at most two candidates");
    w.u64(m.scanned);
    w.u64(m.skipped);
    w.u8(static_cast<std::uint8_t>(m.top.size()));
    for (const auto& c : m.top) {
      w.id(c.identity);
      w.u64(std::bit_cast<std::uint64_t>(c.score));
    }
  }
  void operator()(const Nack& m) {
    w.u8(m.code);
    w.var16(ByteView(reinterpret_cast<const std::uint8_t*>(m.detail.data()), m.detail.size()));
  }
  void operator()(const AccountUpsert& m) {
    w.id(m.account);
    write_amount(w, m.balance);
    w.u8(static_cast<std::uint8_t>(m.status));
  }
  void operator()(const Ack&) {}
  void operator()(const AuditQuery& m) {
    w.u8(m.filter.kind ? static_cast<std::uint8_t>(*m.filter.kind) : 0xFF);
    w.u64(static_cast<std::uint64_t>(m.filter.from_ms));
    w.u64(static_cast<std::uint64_t>(m.filter.to_ms));
  }
  void operator()(const AuditReport& m) {
    w.u32(static_cast<std::uint32_t>(m.events.size()));
    for (const auto& e : m.events) write_event(w, e);
  }
};

constexpr MsgType kTypes[] = {
    MsgType::PosAuthReq,  MsgType::IdentifyReq,        MsgType::AuthorizeReq,        MsgType::AuthorizeResp,
    MsgType::Verdict,     MsgType::AccountChoices,     MsgType::AccountSelect,       MsgType::EnrollReq,
    MsgType::EnrollAck,   MsgType::FlagReq,            MsgType::FlagAck,             MsgType::ClusterIdentifyReq,
    MsgType::ClusterIdentifyResp, MsgType::Nack,       MsgType::AccountUpsert,       MsgType::Ack,
    MsgType::AuditQuery,  MsgType::AuditReport,
};
static_assert(std::size(kTypes) == std::variant_size_v<Message>);

struct EvpCtx {
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  ~EvpCtx() { EVP_CIPHER_CTX_free(ctx); }
};

}  // namespace

// ---- pins -------------------------------------------------------------------

bool Pin::is_valid(std::string_view text) {
  if (text.size() != 4) return false;
  for (char c : text) {
    if (c < '0' || c > '9') return false;
  }
  return true;
}

Pin Pin::parse(std::string_view text) {
  if (!is_valid(text)) throw Error(ErrorCode::BadPin, "PIN must be four digits, got '" + std::string(text) + "'");
  Pin p;
  std::copy(text.begin(), text.end(), p.digits_.begin());
  return p;
}

int Pin::value() const {
  int v = 0;
  for (char c : digits_) v = v * 10 + (c - '0');
  return v;
}

int route_pin(std::string_view pin, int shard_count) {
  if (shard_count < 1 || shard_count > kMaxShards) {
    throw Error(ErrorCode::InvalidArgument, "shard_count must be in [1, 10000]");
  }
  return Pin::parse(pin).value() % shard_count;
}

// ---- names ------------------------------------------------------------------

bool is_known_type(std::uint8_t t) {
  return t >= static_cast<std::uint8_t>(MsgType::PosAuthReq) && t <= static_cast<std::uint8_t>(MsgType::AuditReport);
}

std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::PosAuthReq: return "POS_AUTH_REQ";
    case MsgType::IdentifyReq: return "IDENTIFY_REQ";
    case MsgType::AuthorizeReq: return "AUTHORIZE_REQ";
    case MsgType::AuthorizeResp: return "AUTHORIZE_RESP";
    case MsgType::Verdict: return "VERDICT";
    case MsgType::AccountChoices: return "ACCOUNT_CHOICES";
    case MsgType::AccountSelect: return "ACCOUNT_SELECT";
    case MsgType::EnrollReq: return "ENROLL_REQ";
    case MsgType::EnrollAck: return "ENROLL_ACK";
    case MsgType::FlagReq: return "FLAG_REQ";
    case MsgType::FlagAck: return "FLAG_ACK";
    case MsgType::ClusterIdentifyReq: return "CLUSTER_IDENTIFY_REQ";
    case MsgType::ClusterIdentifyResp: return "CLUSTER_IDENTIFY_RESP";
    case MsgType::Nack: return "NACK";
    case MsgType::AccountUpsert: return "ACCOUNT_UPSERT";
    case MsgType::Ack: return "ACK";
    case MsgType::AuditQuery: return "AUDIT_QUERY";
    case MsgType::AuditReport: return "AUDIT_REPORT";
  }
  return "UNKNOWN";
}

std::string_view to_string(Decision d) { return d == Decision::Allow ? "ALLOW" : "DENY"; }

std::string_view to_string(Reason r) {
  switch (r) {
    case Reason::None: return "NONE";
    case Reason::NoMatch: return "NO_MATCH";
    case Reason::Ambiguous: return "AMBIGUOUS";
    case Reason::Unavailable: return "UNAVAILABLE";
    case Reason::UnknownAccount: return "UNKNOWN_ACCOUNT";
    case Reason::AccountClosed: return "ACCOUNT_CLOSED";
    case Reason::InsufficientFunds: return "INSUFFICIENT_FUNDS";
    case Reason::BadAmount: return "BAD_AMOUNT";
    case Reason::Replay: return "REPLAY";
    case Reason::RoutingError: return "ROUTING_ERROR";
    case Reason::Timeout: return "TIMEOUT";
    case Reason::BadSelection: return "BAD_SELECTION";
    case Reason::Flagged: return "FLAGGED";
  }
  return "UNKNOWN";
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Pos: return "pos";
    case Role::Acquirer: return "acquirer";
    case Role::Shard: return "shard";
    case Role::Member: return "member";
    case Role::Issuer: return "issuer";
    case Role::Bank: return "bank";
    case Role::Authority: return "authority";
    case Role::Admin: return "admin";
  }
  return "unknown";
}

// ---- payloads ---------------------------------------------------------------

MsgType type_of(const Message& m) { return kTypes[m.index()]; }

Bytes encode_payload(const Message& m) {
  ByteWriter w;
  std::visit(PayloadWriter{w}, m);
  return std::move(w).take();
}

Message decode_payload(MsgType type, ByteView payload) {
  ByteReader r(payload);
  auto finish = [&](Message m) {
    r.expect_done();
    return m;
  };
  switch (type) {
    case MsgType::PosAuthReq: {
      PosAuthReq m;
      m.amount = read_amount(r);
      m.merchant = r.id<8>();
      auto t = r.var16();
      m.template_bytes.assign(t.begin(), t.end());
      return finish(m);
    }
    case MsgType::IdentifyReq: {
      IdentifyReq m;
      m.amount = read_amount(r);
      m.merchant = r.id<8>();
      auto t = r.var16();
      m.template_bytes.assign(t.begin(), t.end());
      return finish(m);
    }
    case MsgType::AuthorizeReq: {
      AuthorizeReq m;
      m.identity = r.id<16>();
      m.account = r.id<16>();
      m.amount = read_amount(r);
      m.merchant = r.id<8>();
      return finish(m);
    }
    case MsgType::AuthorizeResp: {
      AuthorizeResp m;
      m.decision = read_decision(r);
      m.reason = read_reason(r);
      return finish(m);
    }
    case MsgType::Verdict: {
      Verdict m;
      m.decision = read_decision(r);
      m.reason = read_reason(r);
      return finish(m);
    }
    case MsgType::AccountChoices: {
      AccountChoices m;
      auto n = r.u8();
      for (int i = 0; i < n; ++i) m.accounts.push_back(r.id<16>());
      return finish(m);
    }
    case MsgType::AccountSelect: {
      AccountSelect m;
      m.account = r.id<16>();
      return finish(m);
    }
    case MsgType::EnrollReq: {
      EnrollReq m;
      m.identity = r.id<16>();
      auto t = r.var16();
      m.template_bytes.assign(t.begin(), t.end());
      m.issuer = r.id<8>();
      m.branch = r.id<8>();
      m.accounts = read_refs(r);
      return finish(m);
    }
    case MsgType::EnrollAck: {
      EnrollAck m;
      m.store_count = r.u64();
      return finish(m);
    }
    case MsgType::FlagReq: {
      FlagReq m;
      m.identity = r.id<16>();
      auto f = r.u8();
      if (f > 1) throw Error(ErrorCode::Malformed, "bad flag byte");
      m.flag = f == 1;
      return finish(m);
    }
    case MsgType::FlagAck: return finish(FlagAck{});
    case MsgType::ClusterIdentifyReq: {
      ClusterIdentifyReq m;
      auto t = r.var16();
      m.template_bytes.assign(t.begin(), t.end());
      return finish(m);
    }
    case MsgType::ClusterIdentifyResp: {
      ClusterIdentifyResp m;
      m.scanned = r.u64();
      m.skipped = r.u64();
      auto n = r.u8();
      if (n > 2) throw Error(ErrorCode::Malformed, "more than two cluster candidates");
      for (int i = 0; i < n; ++i) {
        ScoredIdentity c;
        c.identity = r.id<16>();
        c.score = std::bit_cast<double>(r.u64());
        m.top.push_back(c);
      }
      return finish(m);
    }
    case MsgType::Nack: {
      Nack m;
      m.code = r.u8();
      auto d = r.var16();
      m.detail.assign(d.begin(), d.end());
      return finish(m);
    }
    case MsgType::AccountUpsert: {
      AccountUpsert m;
      m.account = r.id<16>();
      m.balance = read_amount(r);
      auto s = r.u8();
      if (s > 1) throw Error(ErrorCode::Malformed, "bad account status");
      m.status = static_cast<AccountStatus>(s);
      return finish(m);
    }
    case MsgType::Ack: return finish(Ack{});
    case MsgType::AuditQuery: {
      AuditQuery m;
      auto kind = r.u8();
      if (kind != 0xFF) {
        if (kind > static_cast<std::uint8_t>(AuditKind::DenyForwarded)) throw Error(ErrorCode::Malformed, "bad audit kind");
        m.filter.kind = static_cast<AuditKind>(kind);
      }
      m.filter.from_ms = static_cast<std::int64_t>(r.u64());
      m.filter.to_ms = static_cast<std::int64_t>(r.u64());
      return finish(m);
    }
    case MsgType::AuditReport: {
      AuditReport m;
      auto n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) m.events.push_back(read_event(r));
      return finish(m);
    }
  }
  throw Error(ErrorCode::UnknownType, "message type " + std::to_string(static_cast<int>(type)));
}

// ---- frames -----------------------------------------------------------------

Bytes header_bytes(std::uint8_t version, MsgType type, const RoutingHeader& h) {
  ByteWriter w(kHeaderLength);
  w.u8(version);
  w.u8(static_cast<std::uint8_t>(type));
  for (char c : h.pin.digits()) w.u8(static_cast<std::uint8_t>(c));
  w.id(h.txn_id);
  w.u32(h.sender);
  return std::move(w).take();
}

Bytes encode_frame(const Frame& f) {
  const std::size_t length = kHeaderLength + f.body.size();
  if (length > kMaxFrameLength) throw Error(ErrorCode::FrameTooLarge, std::to_string(length) + " bytes");
  ByteWriter w(4 + length);
  w.u32(static_cast<std::uint32_t>(length));
  w.raw(header_bytes(f.version, f.type, f.header));
  w.raw(f.body);
  return std::move(w).take();
}

std::variant<DecodedFrame, NeedMoreData> decode_frame(ByteView buf) {
  if (buf.size() < 4) return NeedMoreData{};
  const std::uint32_t length = load_be32(buf.data());
  if (length > kMaxFrameLength) throw Error(ErrorCode::FrameTooLarge, "declared length " + std::to_string(length));
  if (length < kHeaderLength) throw Error(ErrorCode::Malformed, "frame shorter than its header");
  // Version and type are checked as soon as they arrive, before the body.
  if (buf.size() >= 5 && buf[4] != kVersion) throw Error(ErrorCode::BadVersion, "frame version " + std::to_string(buf[4]));
  if (buf.size() >= 6 && !is_known_type(buf[5])) throw Error(ErrorCode::UnknownType, "type " + std::to_string(buf[5]));
  if (buf.size() < 4 + static_cast<std::size_t>(length)) return NeedMoreData{};

  ByteReader r(buf.subspan(4, length));
  DecodedFrame out;
  out.frame.version = r.u8();
  out.frame.type = static_cast<MsgType>(r.u8());
  auto pin = r.raw(4);
  std::string pin_text(pin.begin(), pin.end());
  if (!Pin::is_valid(pin_text)) throw Error(ErrorCode::BadPin, "routing header PIN");
  out.frame.header.pin = Pin::parse(pin_text);
  out.frame.header.txn_id = r.id<16>();
  out.frame.header.sender = r.u32();
  auto body = r.raw(r.remaining());
  out.frame.body.assign(body.begin(), body.end());
  out.consumed = 4 + length;
  return out;
}

void FrameDecoder::feed(ByteView data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

std::optional<Frame> FrameDecoder::next() {
  auto res = decode_frame(buf_);
  if (std::holds_alternative<NeedMoreData>(res)) return std::nullopt;
  auto& d = std::get<DecodedFrame>(res);
  buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(d.consumed));
  return std::move(d.frame);
}

// ---- envelope ---------------------------------------------------------------

KeyMaterial key_from_hex(std::string_view hex) {
  if (hex.size() != 64) throw Error(ErrorCode::ConfigInvalid, "link key must be 64 hex characters");
  auto bytes = from_hex(hex);
  KeyMaterial k{};
  std::copy(bytes.begin(), bytes.end(), k.begin());
  return k;
}

std::uint64_t LinkKey::reserve_counter() {
  std::uint64_t cur = counter_.load();
  do {
    if (cur == std::numeric_limits<std::uint64_t>::max()) {
      throw Error(ErrorCode::CounterExhausted, "link counter exhausted for sender " + std::to_string(sender_));
    }
  } while (!counter_.compare_exchange_weak(cur, cur + 1));
  return cur;
}

std::array<std::uint8_t, 12> make_nonce(NodeId sender, std::uint64_t counter) {
  std::array<std::uint8_t, 12> nonce{};
  store_be32(nonce.data(), sender);
  store_be64(nonce.data() + 4, counter);
  return nonce;
}

Bytes seal(ByteView plaintext, LinkKey& key, ByteView aad) {
  const std::uint64_t counter = key.reserve_counter();
  const auto nonce = make_nonce(key.sender(), counter);
  Bytes out(kCounterLength + plaintext.size() + kTagLength);
  store_be64(out.data(), counter);

  EvpCtx c;
  int len = 0;
  bool ok = c.ctx != nullptr && EVP_EncryptInit_ex(c.ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(nonce.size()), nullptr) == 1 &&
            EVP_EncryptInit_ex(c.ctx, nullptr, nullptr, key.key().data(), nonce.data()) == 1 &&
            (aad.empty() || EVP_EncryptUpdate(c.ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1) &&
            (plaintext.empty() || EVP_EncryptUpdate(c.ctx, out.data() + kCounterLength, &len, plaintext.data(),
                                                    static_cast<int>(plaintext.size())) == 1) &&
            EVP_EncryptFinal_ex(c.ctx, out.data() + kCounterLength + plaintext.size(), &len) == 1 &&
            EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_GET_TAG, static_cast<int>(kTagLength),
                                out.data() + kCounterLength + plaintext.size()) == 1;
  if (!ok) throw Error(ErrorCode::Transport, "AES-GCM encryption failed");
  return out;
}

Bytes open(ByteView sealed, const KeyMaterial& key, NodeId sender, ByteView aad) {
  if (sealed.size() < kSealOverhead) throw Error(ErrorCode::AuthFail, "sealed body too short");
  const std::uint64_t counter = load_be64(sealed.data());
  const auto nonce = make_nonce(sender, counter);
  const std::size_t ct_len = sealed.size() - kSealOverhead;
  const std::uint8_t* ct = sealed.data() + kCounterLength;
  Bytes tag(sealed.end() - kTagLength, sealed.end());
  Bytes out(ct_len);

  EvpCtx c;
  int len = 0;
  bool ok = c.ctx != nullptr && EVP_DecryptInit_ex(c.ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(nonce.size()), nullptr) == 1 &&
            EVP_DecryptInit_ex(c.ctx, nullptr, nullptr, key.data(), nonce.data()) == 1 &&
            (aad.empty() || EVP_DecryptUpdate(c.ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1) &&
            (ct_len == 0 || EVP_DecryptUpdate(c.ctx, out.data(), &len, ct, static_cast<int>(ct_len)) == 1) &&
            EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_TAG, static_cast<int>(kTagLength), tag.data()) == 1 &&
            EVP_DecryptFinal_ex(c.ctx, out.data() + ct_len, &len) == 1;
  if (!ok) throw Error(ErrorCode::AuthFail, "authentication tag mismatch");
  return out;
}

// ---- keyring ----------------------------------------------------------------

void Keyring::add_peer(NodeId peer, Role role, const KeyMaterial& key) {
  if (peer == self_) throw Error(ErrorCode::ConfigInvalid, "node cannot link to itself");
  peers_[peer] = Peer{role, std::make_unique<LinkKey>(key, self_)};
}

Role Keyring::role_of(NodeId peer) const {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw Error(ErrorCode::UnknownPeer, "no link to node " + std::to_string(peer));
  return it->second.role;
}

Bytes Keyring::make_frame(NodeId peer, const Pin& pin, const TxnId& txn, const Message& msg) {
  auto it = peers_.find(peer);
  if (it == peers_.end()) throw Error(ErrorCode::UnknownPeer, "no link to node " + std::to_string(peer));
  Frame f;
  f.type = type_of(msg);
  f.header = RoutingHeader{pin, txn, self_};
  const Bytes aad = header_bytes(f.version, f.type, f.header);
  f.body = seal(encode_payload(msg), *it->second.key, aad);
  return encode_frame(f);
}

Envelope Keyring::open_frame(ByteView frame_bytes) const {
  auto res = decode_frame(frame_bytes);
  if (std::holds_alternative<NeedMoreData>(res)) throw Error(ErrorCode::Truncated, "incomplete frame");
  auto& d = std::get<DecodedFrame>(res);
  if (d.consumed != frame_bytes.size()) throw Error(ErrorCode::Malformed, "trailing bytes after frame");
  const Frame& f = d.frame;
  auto it = peers_.find(f.header.sender);
  if (it == peers_.end()) throw Error(ErrorCode::UnknownPeer, "frame from unknown node " + std::to_string(f.header.sender));
  const Bytes aad = header_bytes(f.version, f.type, f.header);
  Bytes plain = open(f.body, it->second.key->key(), f.header.sender, aad);
  Envelope e;
  e.type = f.type;
  e.header = f.header;
  e.peer_role = it->second.role;
  try {
    e.message = decode_payload(f.type, plain);
  } catch (const Error& err) {
    // Authenticated but unparseable: the peer is buggy, not an attacker.
    throw Error(ErrorCode::Malformed, err.what());
  }
  return e;
}

}  // namespace bionet::wire
