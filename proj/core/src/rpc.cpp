#include "bionet/rpc.hpp"

namespace bionet::net {

wire::Envelope rpc(wire::Keyring& keys, Network& net, NodeId peer, const wire::Pin& pin, const TxnId& txn,
                   const wire::Message& msg, Millis timeout) {
  Bytes frame = keys.make_frame(peer, pin, txn, msg);
  Bytes resp = net.connect(peer)->call(frame, timeout);
  wire::Envelope env;
  try {
    env = keys.open_frame(resp);
  } catch (const Error& e) {
    throw Error(ErrorCode::Transport, std::string("bad reply from node ") + std::to_string(peer) + ": " + e.what());
  }
  if (env.header.sender != peer) throw Error(ErrorCode::Transport, "reply from unexpected node");
  if (env.header.txn_id != txn) throw Error(ErrorCode::Transport, "reply for a different transaction");
  return env;
}

Bytes reply(wire::Keyring& keys, const wire::Envelope& request, const wire::Message& msg) {
  return keys.make_frame(request.header.sender, request.header.pin, request.header.txn_id, msg);
}

wire::Nack make_nack(ErrorCode code, std::string detail) {
  return wire::Nack{static_cast<std::uint8_t>(code), std::move(detail)};
}

void raise_nack(const wire::Nack& nack) {
  if (nack.code > static_cast<std::uint8_t>(ErrorCode::ConfigInvalid)) {
    throw Error(ErrorCode::Malformed, "NACK with unknown code: " + nack.detail);
  }
  throw Error(static_cast<ErrorCode>(nack.code), nack.detail);
}

}  // namespace bionet::net
