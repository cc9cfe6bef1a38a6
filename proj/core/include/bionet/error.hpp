#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bionet {

enum class ErrorCode {
  InvalidArgument,
  SpacingInfeasible,
  OutOfBounds,
  BadMagic,
  BadVersion,
  Truncated,
  Malformed,
  InsufficientMinutiae,
  Unsatisfiable,
  BadPin,
  AuthFail,
  CounterExhausted,
  FrameTooLarge,
  UnknownType,
  UnknownPeer,
  WrongShard,
  DuplicateIdentity,
  UnknownIdentity,
  Forbidden,
  MemberUnreachable,
  Transport,
  Timeout,
  ConfigInvalid,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bionet
