#pragma once

#include "bionet/transport.hpp"
#include "bionet/wire.hpp"

namespace bionet::net {

/// Seals `msg` for `peer`, sends it and opens the reply. The reply must come
/// from `peer` and carry the same txn_id; anything else is a `Transport` error.
wire::Envelope rpc(wire::Keyring& keys, Network& net, NodeId peer, const wire::Pin& pin, const TxnId& txn,
                   const wire::Message& msg, Millis timeout);

/// Reply helper for servers: sealed back to the sender of `request`.
Bytes reply(wire::Keyring& keys, const wire::Envelope& request, const wire::Message& msg);

wire::Nack make_nack(ErrorCode code, std::string detail);
/// Rethrows a NACK as the `Error` it describes.
[[noreturn]] void raise_nack(const wire::Nack& nack);

/// Extracts `T` from a reply, converting NACKs into exceptions.
template <typename T>
T expect(const wire::Envelope& env) {
  if (auto* nack = std::get_if<wire::Nack>(&env.message)) raise_nack(*nack);
  if (auto* m = std::get_if<T>(&env.message)) return *m;
  throw Error(ErrorCode::Malformed, "unexpected reply " + std::string(wire::to_string(env.type)));
}

}  // namespace bionet::net
