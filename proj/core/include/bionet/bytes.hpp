#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bionet/error.hpp"

namespace bionet {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

template <std::size_t N>
using Id = std::array<std::uint8_t, N>;

using IdentityId = Id<16>;
using AccountRef = Id<16>;
using TxnId = Id<16>;
using MerchantId = Id<8>;
using BankId = Id<8>;

/// Big-endian appender used by every on-disk and on-wire format.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(std::size_t reserve) { buf_.reserve(reserve); }

  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void raw(ByteView data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
  template <std::size_t N>
  void id(const Id<N>& v) { buf_.insert(buf_.end(), v.begin(), v.end()); }
  // 16-bit length prefix followed by the bytes.
  void var16(ByteView data);

  const Bytes& bytes() const& { return buf_; }
  Bytes take() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Bounds-checked big-endian reader. Short reads throw `Truncated`.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  ByteView raw(std::size_t n);
  template <std::size_t N>
  Id<N> id() {
    auto v = raw(N);
    Id<N> out{};
    std::copy(v.begin(), v.end(), out.begin());
    return out;
  }
  ByteView var16();

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }
  // Throws `Malformed` if unread bytes remain.
  void expect_done() const;

 private:
  ByteView data_;
  std::size_t pos_ = 0;
};

std::uint32_t load_be32(const std::uint8_t* p);
void store_be32(std::uint8_t* p, std::uint32_t v);
std::uint64_t load_be64(const std::uint8_t* p);
void store_be64(std::uint8_t* p, std::uint64_t v);

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

template <std::size_t N>
std::string to_hex(const Id<N>& id) {
  return to_hex(ByteView(id.data(), id.size()));
}

template <std::size_t N>
Id<N> id_from_hex(std::string_view hex) {
  auto b = from_hex(hex);
  if (b.size() != N) {
    throw Error(ErrorCode::InvalidArgument, "expected " + std::to_string(2 * N) + " hex digits");
  }
  Id<N> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

// Left-aligned ASCII label padded with zero bytes, e.g. bank and merchant ids.
template <std::size_t N>
Id<N> id_from_label(std::string_view label) {
  if (label.size() > N) throw Error(ErrorCode::InvalidArgument, "label too long: " + std::string(label));
  Id<N> out{};
  std::copy(label.begin(), label.end(), out.begin());
  return out;
}

}  // namespace bionet
