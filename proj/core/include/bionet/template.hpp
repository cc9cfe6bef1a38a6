#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bionet/bytes.hpp"

namespace bionet {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;
inline constexpr double kPi = 3.141592653589793238462643383279;

enum class MinutiaKind : std::uint8_t { RidgeEnding = 0, Bifurcation = 1 };

struct Minutia {
  double x = 0;      // pixels, [0, width - 1]
  double y = 0;      // pixels, [0, height - 1]
  double angle = 0;  // radians, [0, 2pi)
  MinutiaKind kind = MinutiaKind::RidgeEnding;
  double quality = 1.0;  // [0, 1]

  bool operator==(const Minutia&) const = default;
};

inline constexpr std::size_t kMaxMinutiae = 256;
inline constexpr double kDefaultMinSpacing = 8.0;
inline constexpr int kDefaultImageSize = 512;

struct Template {
  int width = kDefaultImageSize;
  int height = kDefaultImageSize;
  std::vector<Minutia> minutiae;

  bool operator==(const Template&) const = default;
};

struct PerturbationParams {
  double pos_sigma = 0;            // px
  double angle_sigma = 0;          // rad
  double dropout_prob = 0;         // [0, 1)
  int spurious_count = 0;
  double global_rotation_max = 0;  // rad
  double global_shift_max = 0;     // px
};

struct GenerateOptions {
  double min_spacing = kDefaultMinSpacing;
  // When positive, minutiae are confined to the disc centered on the image with
  // radius min(width, height) / 2 - margin. Any rotation about the center plus a
  // translation shorter than the margin then keeps the template in bounds.
  double margin = 0;
};

/// Wraps an angle into [0, 2pi).
double normalize_angle(double a);
/// Wraps an angle difference into [-pi, pi).
double wrap_difference(double a);

/// Throws `InvalidArgument` if the template breaks a structural invariant
/// (count, bounds, angle range, quality range).
void validate(const Template& t);

Template generate_template(std::uint64_t seed, int n, int width = kDefaultImageSize,
                           int height = kDefaultImageSize, const GenerateOptions& opts = {});

/// Synthetic second capture of the same finger. Never returns fewer than
/// `kPerturbFloor` minutiae when the input has at least that many.
inline constexpr std::size_t kPerturbFloor = 4;
Template perturb(const Template& t, const PerturbationParams& p, std::uint64_t seed);

/// Rotates about the image center, then translates. Throws `OutOfBounds` if any
/// minutia leaves the image.
Template rigid_transform(const Template& t, double dtheta, double dx, double dy);

// .biot binary format
Bytes encode_template(const Template& t);
Template decode_template(ByteView bytes);
/// The template as it reads back after a round trip through the file format.
Template quantize(const Template& t);

void write_template_file(const std::filesystem::path& path, const Template& t);
Template read_template_file(const std::filesystem::path& path);

}  // namespace bionet
