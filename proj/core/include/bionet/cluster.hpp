#pragma once

#include <memory>
#include <vector>

#include "bionet/shard_server.hpp"

namespace bionet::cluster {

using wire::NodeId;

/// First 8 bytes of the identity, big-endian, modulo `c`.
int partition(const IdentityId& id, int c);

/// Holds one partition of a shard's gallery and answers scans for the shard's
/// coordinator.
class ClusterMember : public net::FrameHandler {
 public:
  ClusterMember(mcc::MatcherParams params, std::shared_ptr<wire::Keyring> keys, unsigned workers = 1);

  const shard::Gallery& gallery() const { return gallery_; }
  wire::ClusterIdentifyResp identify(ByteView template_bytes) const;

  /// CLUSTER_IDENTIFY_REQ and ENROLL_REQ, from shard links only.
  std::optional<Bytes> handle(ByteView frame) override;

 private:
  shard::Gallery gallery_;
  std::shared_ptr<wire::Keyring> keys_;
};

/// Identification backend that scatters each probe to every member and merges
/// their top-two candidates with the single-node decision rule.
class ClusterCoordinator : public shard::IdentificationBackend {
 public:
  ClusterCoordinator(mcc::MatcherParams params, std::shared_ptr<wire::Keyring> keys, net::Network& net,
                     std::vector<NodeId> members, net::Millis timeout = net::Millis{5000});

  int size() const { return static_cast<int>(members_.size()); }

  /// Throws `MemberUnreachable` when the owning member does not acknowledge.
  void enroll(const IdentityId& id, const Template& t, ByteView template_bytes, const wire::Pin& pin,
              const TxnId& txn) override;
  /// Fails closed with `MemberUnreachable` unless every member answers.
  mcc::IdentificationResult identify(const Template& probe, ByteView probe_bytes, const wire::Pin& pin,
                                     const TxnId& txn) override;

 private:
  mcc::MatcherParams params_;
  std::shared_ptr<wire::Keyring> keys_;
  net::Network& net_;
  std::vector<NodeId> members_;
  net::Millis timeout_;
};

}  // namespace bionet::cluster
