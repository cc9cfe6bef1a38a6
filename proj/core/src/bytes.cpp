#include "bionet/bytes.hpp"

#include <algorithm>

namespace bionet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::SpacingInfeasible: return "SPACING_INFEASIBLE";
    case ErrorCode::OutOfBounds: return "OUT_OF_BOUNDS";
    case ErrorCode::BadMagic: return "BAD_MAGIC";
    case ErrorCode::BadVersion: return "BAD_VERSION";
    case ErrorCode::Truncated: return "TRUNCATED";
    case ErrorCode::Malformed: return "MALFORMED";
    case ErrorCode::InsufficientMinutiae: return "INSUFFICIENT_MINUTIAE";
    case ErrorCode::Unsatisfiable: return "UNSATISFIABLE";
    case ErrorCode::BadPin: return "BAD_PIN";
    case ErrorCode::AuthFail: return "AUTH_FAIL";
    case ErrorCode::CounterExhausted: return "COUNTER_EXHAUSTED";
    case ErrorCode::FrameTooLarge: return "FRAME_TOO_LARGE";
    case ErrorCode::UnknownType: return "UNKNOWN_TYPE";
    case ErrorCode::UnknownPeer: return "UNKNOWN_PEER";
    case ErrorCode::WrongShard: return "WRONG_SHARD";
    case ErrorCode::DuplicateIdentity: return "DUPLICATE_IDENTITY";
    case ErrorCode::UnknownIdentity: return "UNKNOWN_IDENTITY";
    case ErrorCode::Forbidden: return "FORBIDDEN";
    case ErrorCode::MemberUnreachable: return "MEMBER_UNREACHABLE";
    case ErrorCode::Transport: return "TRANSPORT";
    case ErrorCode::Timeout: return "TIMEOUT";
    case ErrorCode::ConfigInvalid: return "CONFIG_INVALID";
  }
  return "UNKNOWN";
}

void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  buf_.push_back(static_cast<std::uint8_t>(v));
}

void ByteWriter::u32(std::uint32_t v) {
  std::uint8_t b[4];
  store_be32(b, v);
  buf_.insert(buf_.end(), b, b + 4);
}

void ByteWriter::u64(std::uint64_t v) {
  std::uint8_t b[8];
  store_be64(b, v);
  buf_.insert(buf_.end(), b, b + 8);
}

void ByteWriter::var16(ByteView data) {
  if (data.size() > 0xFFFF) throw Error(ErrorCode::InvalidArgument, "variable field exceeds 65535 bytes");
  u16(static_cast<std::uint16_t>(data.size()));
  raw(data);
}

ByteView ByteReader::raw(std::size_t n) {
  if (remaining() < n) throw Error(ErrorCode::Truncated, "need " + std::to_string(n) + " bytes");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return raw(1)[0]; }

std::uint16_t ByteReader::u16() {
  auto b = raw(2);
  return static_cast<std::uint16_t>((b[0] << 8) | b[1]);
}

std::uint32_t ByteReader::u32() { return load_be32(raw(4).data()); }
std::uint64_t ByteReader::u64() { return load_be64(raw(8).data()); }

ByteView ByteReader::var16() {
  auto n = u16();
  return raw(n);
}

void ByteReader::expect_done() const {
  if (!done()) throw Error(ErrorCode::Malformed, std::to_string(remaining()) + " trailing bytes");
}

std::uint32_t load_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

void store_be32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v >> 24);
  p[1] = static_cast<std::uint8_t>(v >> 16);
  p[2] = static_cast<std::uint8_t>(v >> 8);
  p[3] = static_cast<std::uint8_t>(v);
}

std::uint64_t load_be64(const std::uint8_t* p) {
  return (std::uint64_t{load_be32(p)} << 32) | load_be32(p + 4);
}

void store_be64(std::uint8_t* p, std::uint64_t v) {
  store_be32(p, static_cast<std::uint32_t>(v >> 32));
  store_be32(p + 4, static_cast<std::uint32_t>(v));
}

std::string to_hex(ByteView data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw Error(ErrorCode::InvalidArgument, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = nibble(hex[2 * i]);
    int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::InvalidArgument, "bad hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

}  // namespace bionet
