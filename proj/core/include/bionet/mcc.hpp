#pragma once

// Minutia cylinder-code matcher: binary local descriptors, popcount-based
// local similarity, Local Similarity Sort consolidation and 1:N identification.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "bionet/bytes.hpp"
#include "bionet/template.hpp"

namespace bionet::mcc {

struct MatcherParams {
  double radius = 70.0;            // R, px
  int spatial_cells = 8;           // NS, cells per axis
  int angular_sections = 6;        // ND
  double sigma_s = 9.0;            // px
  double sigma_d = kPi / 9.0;      // rad
  double bin_threshold = 0.01;     // mu
  int min_neighbors = 2;
  double max_dir_diff = kPi / 2.0;
  int top_pairs_cap = 10;
  int min_valid_cylinders = 4;
  double match_threshold = 0.60;   // theta
  double ambiguity_margin = 0.05;  // eps

  std::size_t cell_count() const {
    return static_cast<std::size_t>(spatial_cells) * spatial_cells * angular_sections;
  }
};

/// Throws `InvalidArgument` when a parameter breaks its documented range.
void validate(const MatcherParams& p);

struct CylinderCode {
  std::vector<std::uint64_t> bits;
  std::vector<std::uint64_t> cell_valid;
  Minutia center;
  bool valid = false;  // >= min_neighbors within R + 3 sigma_s, and at least one set bit
  std::size_t cells = 0;

  std::size_t set_bits() const;
  std::size_t valid_cells() const;
  /// Value of cell (i, j, k); i runs along the minutia direction.
  bool bit(int i, int j, int k, const MatcherParams& p) const;
  bool cell_is_valid(int i, int j, int k, const MatcherParams& p) const;
};

struct CylinderSet {
  std::vector<CylinderCode> cylinders;
  std::size_t valid_count = 0;
};

CylinderSet build_cylinders(const Template& t, const MatcherParams& p);

/// 1 - |a xor b| / (|a| + |b|) over the cells valid in both, with |.| the
/// Euclidean norm of the restricted bit vector. Zero when both are empty.
double local_similarity(const CylinderCode& a, const CylinderCode& b, const MatcherParams& p);

/// Mean of the top min(cap, nA, nB) local similarities over all
/// direction-compatible valid pairs. Throws `InsufficientMinutiae`.
double match_score(const CylinderSet& a, const CylinderSet& b, const MatcherParams& p);

bool has_enough_cylinders(const CylinderSet& s, const MatcherParams& p);

// ---- identification -------------------------------------------------------

struct Candidate {
  IdentityId id{};
  double score = 0;

  bool operator==(const Candidate&) const = default;
};

/// Total order used everywhere a ranking is needed: higher score first, then the
/// lexicographically smaller identity.
bool ranks_before(const Candidate& a, const Candidate& b);

enum class Outcome : std::uint8_t { Match = 0, NoMatch = 1, Ambiguous = 2 };

struct IdentificationResult {
  Outcome outcome = Outcome::NoMatch;
  // Match: the winner. Ambiguous: the top two. NoMatch: the best seen, if any.
  std::vector<Candidate> top;
  double best_score = 0;
  std::uint64_t scanned = 0;
  std::uint64_t skipped = 0;

  bool operator==(const IdentificationResult&) const = default;
};

struct GalleryEntry {
  IdentityId id{};
  const CylinderSet* cylinders = nullptr;
};

/// Best two distinct identities from an arbitrary candidate list.
std::vector<Candidate> top_two(std::span<const Candidate> candidates);

/// Applies the threshold/margin rule to an already ranked top-two list.
IdentificationResult decide(std::vector<Candidate> top, std::uint64_t scanned, std::uint64_t skipped,
                            const MatcherParams& p);

/// Partial result of scanning one slice of a gallery: its top two candidates
/// plus scan counters. Merging partials and calling `decide` is equivalent to
/// identifying over the whole gallery.
struct PartialScan {
  std::vector<Candidate> top;
  std::uint64_t scanned = 0;
  std::uint64_t skipped = 0;
};

PartialScan scan(const CylinderSet& probe, std::span<const GalleryEntry> gallery, const MatcherParams& p,
                 unsigned workers = 1);

IdentificationResult merge(std::span<const PartialScan> parts, const MatcherParams& p);

/// Throws `InsufficientMinutiae` for an unusable probe.
IdentificationResult identify(const CylinderSet& probe, std::span<const GalleryEntry> gallery,
                              const MatcherParams& p, unsigned workers = 1);

// ---- calibration ----------------------------------------------------------

struct Calibration {
  double theta = 1.0;
  double fmr = 0;
  double fnmr = 0;
};

struct ErrorRates {
  double fmr = 0;
  double fnmr = 0;
};

/// Acceptance is `score >= theta`.
ErrorRates error_rates(std::span<const double> genuine, std::span<const double> impostor, double theta);

Calibration calibrate_threshold(std::span<const double> genuine, std::span<const double> impostor,
                                double target_fmr);

}  // namespace bionet::mcc
