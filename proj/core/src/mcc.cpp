#include "bionet/mcc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <thread>

namespace bionet::mcc {
namespace {

std::size_t word_count(std::size_t cells) { return (cells + 63) / 64; }

std::size_t cell_index(int i, int j, int k, const MatcherParams& p) {
  return (static_cast<std::size_t>(i) * p.spatial_cells + static_cast<std::size_t>(j)) * p.angular_sections +
         static_cast<std::size_t>(k);
}

bool test_bit(const std::vector<std::uint64_t>& words, std::size_t idx) {
  return (words[idx / 64] >> (idx % 64)) & 1U;
}

bool direction_compatible(const CylinderCode& a, const CylinderCode& b, const MatcherParams& p) {
  return std::abs(wrap_difference(a.center.angle - b.center.angle)) <= p.max_dir_diff;
}

// Running best-two over distinct identities.
void offer(std::vector<Candidate>& top, const Candidate& c) {
  if (top.empty()) {
    top.push_back(c);
    return;
  }
  if (ranks_before(c, top[0])) {
    if (c.id == top[0].id) {
      top[0] = c;
    } else {
      if (top.size() == 1) top.push_back(top[0]);
      else top[1] = top[0];
      top[0] = c;
    }
    return;
  }
  if (c.id == top[0].id) return;
  if (top.size() == 1) {
    top.push_back(c);
  } else if (ranks_before(c, top[1])) {
    top[1] = c;
  }
}

}  // namespace

void validate(const MatcherParams& p) {
  if (p.spatial_cells < 2 || p.angular_sections < 2) throw Error(ErrorCode::InvalidArgument, "NS and ND must be >= 2");
  if (!(p.radius > 0 && p.sigma_s > 0 && p.sigma_d > 0)) {
    throw Error(ErrorCode::InvalidArgument, "radius and sigmas must be positive");
  }
  if (!(p.match_threshold > 0 && p.match_threshold < 1)) throw Error(ErrorCode::InvalidArgument, "theta must be in (0, 1)");
  if (!(p.ambiguity_margin >= 0)) throw Error(ErrorCode::InvalidArgument, "eps must be non-negative");
  if (p.top_pairs_cap < 1 || p.min_valid_cylinders < 1 || p.min_neighbors < 0) {
    throw Error(ErrorCode::InvalidArgument, "counts out of range");
  }
}

std::size_t CylinderCode::set_bits() const {
  std::size_t n = 0;
  for (auto w : bits) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::size_t CylinderCode::valid_cells() const {
  std::size_t n = 0;
  for (auto w : cell_valid) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

bool CylinderCode::bit(int i, int j, int k, const MatcherParams& p) const {
  return test_bit(bits, cell_index(i, j, k, p));
}

bool CylinderCode::cell_is_valid(int i, int j, int k, const MatcherParams& p) const {
  return test_bit(cell_valid, cell_index(i, j, k, p));
}

CylinderSet build_cylinders(const Template& t, const MatcherParams& p) {
  validate(p);
  const int ns = p.spatial_cells;
  const int nd = p.angular_sections;
  const std::size_t cells = p.cell_count();
  const std::size_t words = word_count(cells);
  const double delta_s = 2.0 * p.radius / ns;
  const double reach = 3.0 * p.sigma_s;
  const double reach_sq = reach * reach;
  const double neighbor_sq = (p.radius + reach) * (p.radius + reach);
  const double radius_sq = p.radius * p.radius;
  const double two_ss = 2.0 * p.sigma_s * p.sigma_s;
  const double two_sd = 2.0 * p.sigma_d * p.sigma_d;
  const double xmax = t.width, ymax = t.height;

  std::vector<double> section_angle(static_cast<std::size_t>(nd));
  for (int k = 0; k < nd; ++k) section_angle[k] = -kPi + (k + 0.5) * kTwoPi / nd;

  CylinderSet out;
  out.cylinders.reserve(t.minutiae.size());
  std::vector<std::size_t> neighbors;
  std::vector<double> gd(static_cast<std::size_t>(nd));
  std::vector<double> value(static_cast<std::size_t>(nd));

  for (std::size_t mi = 0; mi < t.minutiae.size(); ++mi) {
    const Minutia& m = t.minutiae[mi];
    CylinderCode cyl;
    cyl.center = m;
    cyl.cells = cells;
    cyl.bits.assign(words, 0);
    cyl.cell_valid.assign(words, 0);

    neighbors.clear();
    for (std::size_t ti = 0; ti < t.minutiae.size(); ++ti) {
      if (ti == mi) continue;
      double dx = t.minutiae[ti].x - m.x, dy = t.minutiae[ti].y - m.y;
      if (dx * dx + dy * dy <= neighbor_sq) neighbors.push_back(ti);
    }

    const double c = std::cos(m.angle), s = std::sin(m.angle);
    for (int i = 0; i < ns; ++i) {
      const double ox = (i - (ns - 1) / 2.0) * delta_s;
      for (int j = 0; j < ns; ++j) {
        const double oy = (j - (ns - 1) / 2.0) * delta_s;
        if (ox * ox + oy * oy > radius_sq) continue;
        const double px = m.x + c * ox - s * oy;
        const double py = m.y + s * ox + c * oy;
        if (px < 0 || px >= xmax || py < 0 || py >= ymax) continue;

        std::fill(value.begin(), value.end(), 0.0);
        for (auto ti : neighbors) {
          const Minutia& n = t.minutiae[ti];
          double dx = n.x - px, dy = n.y - py;
          double d2 = dx * dx + dy * dy;
          if (d2 > reach_sq) continue;
          const double gs = std::exp(-d2 / two_ss);
          const double dtheta = wrap_difference(m.angle - n.angle);
          for (int k = 0; k < nd; ++k) {
            const double dphi = wrap_difference(section_angle[k] - dtheta);
            value[k] += gs * std::exp(-dphi * dphi / two_sd);
          }
        }
        for (int k = 0; k < nd; ++k) {
          const std::size_t idx = cell_index(i, j, k, p);
          cyl.cell_valid[idx / 64] |= std::uint64_t{1} << (idx % 64);
          if (value[k] >= p.bin_threshold) cyl.bits[idx / 64] |= std::uint64_t{1} << (idx % 64);
        }
      }
    }
    // An empty cylinder carries nothing to compare and would score 0 against itself.
    cyl.valid = static_cast<int>(neighbors.size()) >= p.min_neighbors && cyl.set_bits() > 0;
    out.valid_count += cyl.valid;
    out.cylinders.push_back(std::move(cyl));
  }
  return out;
}

double local_similarity(const CylinderCode& a, const CylinderCode& b, const MatcherParams&) {
  const std::size_t words = std::min(a.bits.size(), b.bits.size());
  int pa = 0, pb = 0, px = 0;
  for (std::size_t w = 0; w < words; ++w) {
    const std::uint64_t mask = a.cell_valid[w] & b.cell_valid[w];
    const std::uint64_t x = a.bits[w] & mask;
    const std::uint64_t y = b.bits[w] & mask;
    pa += std::popcount(x);
    pb += std::popcount(y);
    px += std::popcount(x ^ y);
  }
  if (pa == 0 && pb == 0) return 0.0;
  return 1.0 - std::sqrt(static_cast<double>(px)) / (std::sqrt(static_cast<double>(pa)) + std::sqrt(static_cast<double>(pb)));
}

bool has_enough_cylinders(const CylinderSet& s, const MatcherParams& p) {
  return static_cast<int>(s.valid_count) >= p.min_valid_cylinders;
}

double match_score(const CylinderSet& a, const CylinderSet& b, const MatcherParams& p) {
  if (!has_enough_cylinders(a, p) || !has_enough_cylinders(b, p)) {
    throw Error(ErrorCode::InsufficientMinutiae,
                "valid cylinders " + std::to_string(a.valid_count) + "/" + std::to_string(b.valid_count));
  }
  const std::size_t n_pairs = std::min({static_cast<std::size_t>(p.top_pairs_cap), a.valid_count, b.valid_count});

  // Keep the n_pairs largest similarities in a small descending buffer.
  std::vector<double> best;
  best.reserve(n_pairs + 1);
  for (const auto& ca : a.cylinders) {
    if (!ca.valid) continue;
    for (const auto& cb : b.cylinders) {
      if (!cb.valid || !direction_compatible(ca, cb, p)) continue;
      const double sim = local_similarity(ca, cb, p);
      if (best.size() == n_pairs && sim <= best.back()) continue;
      auto pos = std::upper_bound(best.begin(), best.end(), sim, std::greater<>());
      best.insert(pos, sim);
      if (best.size() > n_pairs) best.pop_back();
    }
  }
  double sum = 0;
  for (double v : best) sum += v;
  return sum / static_cast<double>(n_pairs);
}

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

std::vector<Candidate> top_two(std::span<const Candidate> candidates) {
  std::vector<Candidate> top;
  top.reserve(2);
  for (const auto& c : candidates) offer(top, c);
  return top;
}

IdentificationResult decide(std::vector<Candidate> top, std::uint64_t scanned, std::uint64_t skipped,
                            const MatcherParams& p) {
  IdentificationResult r;
  r.scanned = scanned;
  r.skipped = skipped;
  if (top.empty()) {
    r.outcome = Outcome::NoMatch;
    return r;
  }
  r.best_score = top[0].score;
  if (top[0].score < p.match_threshold) {
    r.outcome = Outcome::NoMatch;
    r.top = {top[0]};
  } else if (top.size() >= 2 && top[1].score >= p.match_threshold &&
             top[0].score - top[1].score < p.ambiguity_margin) {
    r.outcome = Outcome::Ambiguous;
    r.top = {top[0], top[1]};
  } else {
    r.outcome = Outcome::Match;
    r.top = {top[0]};
  }
  return r;
}

PartialScan scan(const CylinderSet& probe, std::span<const GalleryEntry> gallery, const MatcherParams& p,
                 unsigned workers) {
  if (!has_enough_cylinders(probe, p)) {
    throw Error(ErrorCode::InsufficientMinutiae, "probe has " + std::to_string(probe.valid_count) + " valid cylinders");
  }
  // Scores are computed independently per entry and reduced in gallery order,
  // so the result cannot depend on the worker count.
  constexpr double kSkipped = -1.0;
  std::vector<double> scores(gallery.size(), kSkipped);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto* g = gallery[i].cylinders;
      if (g != nullptr && has_enough_cylinders(*g, p)) scores[i] = match_score(probe, *g, p);
    }
  };
  workers = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(gallery.size(), 1))));
  if (workers == 1) {
    work(0, gallery.size());
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (gallery.size() + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
      const std::size_t begin = std::min(gallery.size(), w * chunk);
      const std::size_t end = std::min(gallery.size(), begin + chunk);
      pool.emplace_back(work, begin, end);
    }
  }

  PartialScan out;
  out.scanned = gallery.size();
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (scores[i] == kSkipped) {
      ++out.skipped;
      continue;
    }
    offer(out.top, Candidate{gallery[i].id, scores[i]});
  }
  return out;
}

IdentificationResult merge(std::span<const PartialScan> parts, const MatcherParams& p) {
  std::vector<Candidate> top;
  std::uint64_t scanned = 0, skipped = 0;
  for (const auto& part : parts) {
    for (const auto& c : part.top) offer(top, c);
    scanned += part.scanned;
    skipped += part.skipped;
  }
  return decide(std::move(top), scanned, skipped, p);
}

IdentificationResult identify(const CylinderSet& probe, std::span<const GalleryEntry> gallery,
                              const MatcherParams& p, unsigned workers) {
  PartialScan part = scan(probe, gallery, p, workers);
  return decide(std::move(part.top), part.scanned, part.skipped, p);
}

ErrorRates error_rates(std::span<const double> genuine, std::span<const double> impostor, double theta) {
  ErrorRates r;
  if (!impostor.empty()) {
    auto accepted = std::count_if(impostor.begin(), impostor.end(), [&](double s) { return s >= theta; });
    r.fmr = static_cast<double>(accepted) / static_cast<double>(impostor.size());
  }
  if (!genuine.empty()) {
    auto rejected = std::count_if(genuine.begin(), genuine.end(), [&](double s) { return s < theta; });
    r.fnmr = static_cast<double>(rejected) / static_cast<double>(genuine.size());
  }
  return r;
}

Calibration calibrate_threshold(std::span<const double> genuine, std::span<const double> impostor,
                                double target_fmr) {
  if (genuine.empty() || impostor.empty()) throw Error(ErrorCode::InvalidArgument, "score lists must be non-empty");
  std::vector<double> gen(genuine.begin(), genuine.end());
  std::vector<double> imp(impostor.begin(), impostor.end());
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());

  std::vector<double> candidates;
  candidates.reserve(gen.size() + imp.size() + 2);
  candidates.insert(candidates.end(), gen.begin(), gen.end());
  candidates.insert(candidates.end(), imp.begin(), imp.end());
  candidates.push_back(1.0);
  // Strictly above every possible score; guarantees FMR = 0 is reachable.
  candidates.push_back(std::nextafter(std::max(1.0, imp.back()), 2.0));
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::optional<Calibration> best;
  for (double theta : candidates) {
    auto imp_accepted = imp.end() - std::lower_bound(imp.begin(), imp.end(), theta);
    auto gen_rejected = std::lower_bound(gen.begin(), gen.end(), theta) - gen.begin();
    Calibration c{theta, static_cast<double>(imp_accepted) / static_cast<double>(imp.size()),
                  static_cast<double>(gen_rejected) / static_cast<double>(gen.size())};
    if (c.fmr > target_fmr) continue;
    // Ascending scan: a later candidate with equal FNMR is the larger theta.
    if (!best || c.fnmr <= best->fnmr) best = c;
  }
  if (!best) throw Error(ErrorCode::Unsatisfiable, "no threshold reaches the target FMR");
  return *best;
}

}  // namespace bionet::mcc
