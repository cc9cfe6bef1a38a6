#include "bionet/template.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

namespace bionet {
namespace {

constexpr std::uint8_t kMagic[4] = {0x42, 0x49, 0x4F, 0x54};  // "BIOT"
constexpr std::uint8_t kFormatVersion = 0x01;
constexpr double kAngleUnits = 65536.0;
constexpr double kBoundsSlack = 1e-6;

double center_x(const Template& t) { return (t.width - 1) / 2.0; }
double center_y(const Template& t) { return (t.height - 1) / 2.0; }

double clamp_coord(double v, int extent) { return std::clamp(v, 0.0, static_cast<double>(extent - 1)); }

Minutia random_minutia(std::mt19937_64& rng, double x, double y) {
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  std::uniform_real_distribution<double> quality(0.4, 1.0);
  std::bernoulli_distribution bif(0.5);
  Minutia m;
  m.x = x;
  m.y = y;
  m.angle = normalize_angle(angle(rng));
  m.kind = bif(rng) ? MinutiaKind::Bifurcation : MinutiaKind::RidgeEnding;
  m.quality = quality(rng);
  return m;
}

}  // namespace

double normalize_angle(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0) r += kTwoPi;
  // fmod of a tiny negative value can round up to exactly 2pi.
  if (r >= kTwoPi) r = 0.0;
  return r;
}

double wrap_difference(double a) {
  double r = std::fmod(a + kPi, kTwoPi);
  if (r < 0) r += kTwoPi;
  r -= kPi;
  if (r >= kPi) r -= kTwoPi;
  return r;
}

void validate(const Template& t) {
  if (t.width < 1 || t.height < 1 || t.width > 0xFFFF || t.height > 0xFFFF) {
    throw Error(ErrorCode::InvalidArgument, "image size out of range");
  }
  if (t.minutiae.empty() || t.minutiae.size() > kMaxMinutiae) {
    throw Error(ErrorCode::InvalidArgument, "minutia count must be in [1, 256]");
  }
  for (const auto& m : t.minutiae) {
    if (!(m.x >= 0 && m.x <= t.width - 1 && m.y >= 0 && m.y <= t.height - 1)) {
      throw Error(ErrorCode::InvalidArgument, "minutia outside image");
    }
    if (!(m.angle >= 0 && m.angle < kTwoPi)) throw Error(ErrorCode::InvalidArgument, "angle not in [0, 2pi)");
    if (!(m.quality >= 0 && m.quality <= 1)) throw Error(ErrorCode::InvalidArgument, "quality not in [0, 1]");
    if (m.kind != MinutiaKind::RidgeEnding && m.kind != MinutiaKind::Bifurcation) {
      throw Error(ErrorCode::InvalidArgument, "unknown minutia kind");
    }
  }
}

Template generate_template(std::uint64_t seed, int n, int width, int height, const GenerateOptions& opts) {
  if (n < 1 || n > static_cast<int>(kMaxMinutiae)) {
    throw Error(ErrorCode::InvalidArgument, "n must be in [1, 256]");
  }
  if (width < 128 || height < 128 || width > 0xFFFF || height > 0xFFFF) {
    throw Error(ErrorCode::InvalidArgument, "image must be at least 128x128");
  }
  if (opts.min_spacing < 0 || opts.margin < 0) throw Error(ErrorCode::InvalidArgument, "negative option");

  Template t;
  t.width = width;
  t.height = height;
  t.minutiae.reserve(static_cast<std::size_t>(n));

  std::mt19937_64 rng(seed);
  const double cx = center_x(t);
  const double cy = center_y(t);
  const double disc = (std::min(width, height) - 1) / 2.0 - opts.margin;
  if (opts.margin > 0 && disc <= 0) throw Error(ErrorCode::InvalidArgument, "margin leaves no room");

  std::uniform_real_distribution<double> ux(0.0, width - 1.0);
  std::uniform_real_distribution<double> uy(0.0, height - 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> turn(0.0, kTwoPi);
  const double spacing_sq = opts.min_spacing * opts.min_spacing;

  const std::uint64_t max_attempts = 10'000ULL * static_cast<std::uint64_t>(n);
  std::uint64_t attempts = 0;
  while (t.minutiae.size() < static_cast<std::size_t>(n)) {
    if (attempts++ >= max_attempts) {
      throw Error(ErrorCode::SpacingInfeasible,
                  "placed " + std::to_string(t.minutiae.size()) + " of " + std::to_string(n) + " minutiae");
    }
    double x, y;
    if (opts.margin > 0) {
      // Uniform over the disc.
      double r = disc * std::sqrt(unit(rng));
      double phi = turn(rng);
      x = cx + r * std::cos(phi);
      y = cy + r * std::sin(phi);
    } else {
      x = ux(rng);
      y = uy(rng);
    }
    bool ok = std::all_of(t.minutiae.begin(), t.minutiae.end(), [&](const Minutia& m) {
      double ddx = m.x - x, ddy = m.y - y;
      return ddx * ddx + ddy * ddy >= spacing_sq;
    });
    if (!ok) continue;
    t.minutiae.push_back(random_minutia(rng, x, y));
  }
  return t;
}

Template perturb(const Template& t, const PerturbationParams& p, std::uint64_t seed) {
  validate(t);
  if (p.pos_sigma < 0 || p.angle_sigma < 0 || p.dropout_prob < 0 || p.dropout_prob > 1 || p.spurious_count < 0 ||
      p.global_rotation_max < 0 || p.global_shift_max < 0) {
    throw Error(ErrorCode::InvalidArgument, "perturbation parameters must be non-negative");
  }

  std::mt19937_64 rng(seed);
  Template out = t;

  double rot = 0, sx = 0, sy = 0;
  if (p.global_rotation_max > 0) rot = std::uniform_real_distribution<double>(-p.global_rotation_max, p.global_rotation_max)(rng);
  if (p.global_shift_max > 0) {
    std::uniform_real_distribution<double> shift(-p.global_shift_max, p.global_shift_max);
    sx = shift(rng);
    sy = shift(rng);
  }
  if (rot != 0 || sx != 0 || sy != 0) {
    const double c = std::cos(rot), s = std::sin(rot);
    const double cx = center_x(t), cy = center_y(t);
    for (auto& m : out.minutiae) {
      double rx = m.x - cx, ry = m.y - cy;
      m.x = clamp_coord(cx + c * rx - s * ry + sx, t.width);
      m.y = clamp_coord(cy + s * rx + c * ry + sy, t.height);
      m.angle = normalize_angle(m.angle + rot);
    }
  }

  if (p.pos_sigma > 0 || p.angle_sigma > 0) {
    std::normal_distribution<double> pos(0.0, p.pos_sigma > 0 ? p.pos_sigma : 1.0);
    std::normal_distribution<double> ang(0.0, p.angle_sigma > 0 ? p.angle_sigma : 1.0);
    for (auto& m : out.minutiae) {
      if (p.pos_sigma > 0) {
        m.x = clamp_coord(m.x + pos(rng), t.width);
        m.y = clamp_coord(m.y + pos(rng), t.height);
      }
      if (p.angle_sigma > 0) m.angle = normalize_angle(m.angle + ang(rng));
    }
  }

  if (p.dropout_prob > 0) {
    std::bernoulli_distribution drop(p.dropout_prob);
    std::vector<bool> keep(out.minutiae.size());
    std::size_t kept = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      keep[i] = !drop(rng);
      kept += keep[i];
    }
    // Restore dropped minutiae in original order until the floor is met.
    const std::size_t floor = std::min(kPerturbFloor, keep.size());
    for (std::size_t i = 0; i < keep.size() && kept < floor; ++i) {
      if (!keep[i]) {
        keep[i] = true;
        ++kept;
      }
    }
    std::vector<Minutia> survivors;
    survivors.reserve(kept);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (keep[i]) survivors.push_back(out.minutiae[i]);
    }
    out.minutiae = std::move(survivors);
  }

  if (p.spurious_count > 0) {
    std::uniform_real_distribution<double> ux(0.0, t.width - 1.0);
    std::uniform_real_distribution<double> uy(0.0, t.height - 1.0);
    for (int i = 0; i < p.spurious_count && out.minutiae.size() < kMaxMinutiae; ++i) {
      double x = ux(rng);
      double y = uy(rng);
      out.minutiae.push_back(random_minutia(rng, x, y));
    }
  }
  return out;
}

Template rigid_transform(const Template& t, double dtheta, double dx, double dy) {
  validate(t);
  if (dtheta == 0 && dx == 0 && dy == 0) return t;
  const double c = std::cos(dtheta), s = std::sin(dtheta);
  const double cx = center_x(t), cy = center_y(t);
  const double xmax = t.width - 1.0, ymax = t.height - 1.0;
  Template out = t;
  for (auto& m : out.minutiae) {
    double rx = m.x - cx, ry = m.y - cy;
    double x = cx + c * rx - s * ry + dx;
    double y = cy + s * rx + c * ry + dy;
    if (x < -kBoundsSlack || x > xmax + kBoundsSlack || y < -kBoundsSlack || y > ymax + kBoundsSlack) {
      throw Error(ErrorCode::OutOfBounds, "minutia moved to (" + std::to_string(x) + ", " + std::to_string(y) + ")");
    }
    m.x = std::clamp(x, 0.0, xmax);
    m.y = std::clamp(y, 0.0, ymax);
    m.angle = normalize_angle(m.angle + dtheta);
  }
  return out;
}

Bytes encode_template(const Template& t) {
  validate(t);
  ByteWriter w(11 + 8 * t.minutiae.size());
  for (auto b : kMagic) w.u8(b);
  w.u8(kFormatVersion);
  w.u16(static_cast<std::uint16_t>(t.width));
  w.u16(static_cast<std::uint16_t>(t.height));
  w.u16(static_cast<std::uint16_t>(t.minutiae.size()));
  for (const auto& m : t.minutiae) {
    w.u16(static_cast<std::uint16_t>(std::lround(m.x)));
    w.u16(static_cast<std::uint16_t>(std::lround(m.y)));
    auto units = static_cast<std::uint32_t>(std::lround(m.angle / kTwoPi * kAngleUnits));
    w.u16(static_cast<std::uint16_t>(units % 65536));
    w.u8(static_cast<std::uint8_t>(m.kind));
    w.u8(static_cast<std::uint8_t>(std::lround(m.quality * 255.0)));
  }
  return std::move(w).take();
}

Template decode_template(ByteView bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw Error(ErrorCode::BadMagic, "not a .biot template");
  if (r.u8() != kFormatVersion) throw Error(ErrorCode::BadVersion, "unsupported .biot version");
  Template t;
  t.width = r.u16();
  t.height = r.u16();
  const auto count = r.u16();
  t.minutiae.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    Minutia m;
    m.x = r.u16();
    m.y = r.u16();
    m.angle = r.u16() * (kTwoPi / kAngleUnits);
    auto kind = r.u8();
    if (kind > 1) throw Error(ErrorCode::Malformed, "unknown minutia kind " + std::to_string(kind));
    m.kind = static_cast<MinutiaKind>(kind);
    m.quality = r.u8() / 255.0;
    t.minutiae.push_back(m);
  }
  r.expect_done();
  try {
    validate(t);
  } catch (const Error& e) {
    throw Error(ErrorCode::Malformed, e.what());
  }
  return t;
}

Template quantize(const Template& t) { return decode_template(encode_template(t)); }

void write_template_file(const std::filesystem::path& path, const Template& t) {
  auto bytes = encode_template(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::InvalidArgument, "short write to " + path.string());
}

Template read_template_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_template(bytes);
}

}  // namespace bionet
