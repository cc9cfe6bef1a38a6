#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <vector>

#include "bionet/audit.hpp"
#include "bionet/clock.hpp"
#include "bionet/mcc.hpp"
#include "bionet/transport.hpp"
#include "bionet/wire.hpp"

namespace bionet::shard {

using wire::NodeId;

/// Enrolled templates with cylinders precomputed at insertion, for a whole
/// shard or for one cluster partition. Scans run concurrently under a shared
/// lock; inserts are exclusive.
class Gallery {
 public:
  explicit Gallery(mcc::MatcherParams params, unsigned workers = 1);

  const mcc::MatcherParams& params() const { return params_; }
  std::size_t size() const;
  bool contains(const IdentityId& id) const;
  /// Returns the new size. Throws `DuplicateIdentity` or `InsufficientMinutiae`
  /// and leaves the gallery unchanged on failure.
  std::size_t insert(const IdentityId& id, const Template& t);
  mcc::PartialScan scan(const mcc::CylinderSet& probe) const;
  /// Throws `InsufficientMinutiae` for an unusable probe.
  mcc::IdentificationResult identify(const Template& probe) const;

 private:
  mcc::MatcherParams params_;
  unsigned workers_;
  mutable std::shared_mutex mu_;
  std::vector<std::unique_ptr<mcc::CylinderSet>> owned_;
  std::vector<mcc::GalleryEntry> entries_;
  std::map<IdentityId, std::size_t> index_;
};

/// Where a shard's templates live: in-process, or spread over a cluster.
class IdentificationBackend {
 public:
  virtual ~IdentificationBackend() = default;
  /// Throws on failure without storing anything.
  virtual void enroll(const IdentityId& id, const Template& t, ByteView template_bytes, const wire::Pin& pin,
                      const TxnId& txn) = 0;
  /// Throws `InsufficientMinutiae` for the probe, or `MemberUnreachable`.
  virtual mcc::IdentificationResult identify(const Template& probe, ByteView probe_bytes, const wire::Pin& pin,
                                             const TxnId& txn) = 0;
};

class LocalBackend : public IdentificationBackend {
 public:
  explicit LocalBackend(mcc::MatcherParams params, unsigned workers = 1) : gallery_(params, workers) {}
  void enroll(const IdentityId& id, const Template& t, ByteView, const wire::Pin&, const TxnId&) override {
    gallery_.insert(id, t);
  }
  mcc::IdentificationResult identify(const Template& probe, ByteView, const wire::Pin&, const TxnId&) override {
    return gallery_.identify(probe);
  }
  const Gallery& gallery() const { return gallery_; }

 private:
  Gallery gallery_;
};

struct IdentityRecord {
  IdentityId id{};
  Template tmpl;
  BankId issuer{};
  BankId branch{};
  std::vector<AccountRef> accounts;
  bool flagged = false;
};

/// Append-only, timestamps clamped to be non-decreasing.
class AuditLog {
 public:
  explicit AuditLog(const Clock& clock) : clock_(clock) {}
  void append(AuditEvent e);
  std::vector<AuditEvent> query(const AuditFilter& f) const;
  std::size_t size() const;

 private:
  const Clock& clock_;
  mutable std::mutex mu_;
  std::vector<AuditEvent> events_;
};

enum class FlagPolicy { AllowAndAlert, DenyOnFlag };

struct ShardOptions {
  int shard_index = 0;
  int shard_count = 1;
  FlagPolicy flag_policy = FlagPolicy::AllowAndAlert;
  std::int64_t selection_window_ms = 60'000;
  net::Millis issuer_timeout{5000};
};

/// One BioNet server: owns the identity records of its PIN shard, identifies
/// probes, drives issuer authorization and keeps the red-flag registry.
class ShardServer : public net::FrameHandler {
 public:
  ShardServer(ShardOptions opts, std::shared_ptr<wire::Keyring> keys, net::Network& net, const Clock& clock,
              std::unique_ptr<IdentificationBackend> backend);

  void add_issuer(const BankId& bank, NodeId node);

  /// Throws `WrongShard`, `DuplicateIdentity`, `InsufficientMinutiae`, `Malformed`.
  wire::EnrollAck enroll(const wire::EnrollReq& req, const wire::Pin& claimed_pin, const TxnId& txn = {});
  /// Returns a VERDICT or ACCOUNT_CHOICES.
  wire::Message identify_and_authorize(const wire::IdentifyReq& req, const wire::Pin& pin, const TxnId& txn);
  wire::Verdict select_account(const wire::AccountSelect& req, const wire::Pin& pin, const TxnId& txn);
  /// Throws `UnknownIdentity`.
  void set_flag(const wire::FlagReq& req);
  std::vector<AuditEvent> audit_query(const AuditFilter& filter) const { return audit_.query(filter); }

  std::size_t store_count() const;
  std::optional<IdentityRecord> record(const IdentityId& id) const;
  std::size_t pending_selections() const;

  /// Writes `<identity>.biot` per record plus `index.json`.
  void save_snapshot(const std::filesystem::path& dir) const;
  /// Re-enrolls every record of a snapshot; returns how many were loaded.
  std::size_t load_snapshot(const std::filesystem::path& dir);

  /// Called with every probe template as received, before identification.
  void set_probe_observer(std::function<void(const TxnId&, ByteView)> fn) { probe_observer_ = std::move(fn); }

  std::optional<Bytes> handle(ByteView frame) override;

  const ShardOptions& options() const { return opts_; }

 private:
  struct Pending {
    IdentityId identity{};
    BankId issuer{};
    std::vector<AccountRef> accounts;
    std::int64_t amount = 0;
    MerchantId merchant{};
    std::int64_t expires_ms = 0;
  };

  wire::Verdict authorize(const IdentityId& id, const BankId& issuer, const AccountRef& account,
                          std::int64_t amount, const MerchantId& merchant, const wire::Pin& pin, const TxnId& txn);
  void insert_record(IdentityRecord rec, ByteView template_bytes, const wire::Pin& pin, const TxnId& txn);

  ShardOptions opts_;
  std::shared_ptr<wire::Keyring> keys_;
  net::Network& net_;
  const Clock& clock_;
  std::unique_ptr<IdentificationBackend> backend_;
  AuditLog audit_;

  mutable std::shared_mutex records_mu_;
  std::map<IdentityId, IdentityRecord> records_;
  std::map<BankId, NodeId> issuers_;

  mutable std::mutex pending_mu_;
  std::map<TxnId, Pending> pending_;

  std::function<void(const TxnId&, ByteView)> probe_observer_;
};

}  // namespace bionet::shard
