#include "bionet/harness.hpp"

#include <array>
#include <random>

#include "bionet/rpc.hpp"

namespace bionet::harness {

CapacityResult capacity_model(const CapacityInputs& in) {
  if (in.servers == 0 || in.matches_per_second == 0 || in.templates_per_server == 0 || in.cluster_size == 0) {
    throw Error(ErrorCode::InvalidArgument, "capacity inputs must be at least 1");
  }
  std::uint64_t sc = 0, scm = 0, total = 0;
  if (__builtin_mul_overflow(in.servers, in.cluster_size, &sc) ||
      __builtin_mul_overflow(sc, in.matches_per_second, &scm) ||
      __builtin_mul_overflow(in.servers, in.templates_per_server, &total)) {
    throw Error(ErrorCode::InvalidArgument, "capacity arithmetic overflows 64 bits");
  }
  return CapacityResult{scm / in.templates_per_server, scm % in.templates_per_server, total};
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t{out[0]} << 32) | out[1];
}

namespace {

enum Stream : std::uint64_t { kFinger = 1, kCapture = 2, kImpostorFinger = 3, kImpostorPick = 4 };

}  // namespace

Template corpus_finger(std::uint64_t seed, std::uint64_t index, const CorpusParams& cp) {
  GenerateOptions opts;
  opts.margin = cp.margin;
  return quantize(generate_template(derive_seed(seed, kFinger, index), cp.minutiae, kDefaultImageSize,
                                    kDefaultImageSize, opts));
}

Template corpus_capture(const Template& finger, std::uint64_t seed, std::uint64_t index, std::uint64_t sample,
                        const CorpusParams& cp) {
  return quantize(perturb(finger, cp.genuine, derive_seed(seed, kCapture, index * 1'000'003ULL + sample)));
}

RocResult run_roc(const RocCorpus& corpus, const mcc::MatcherParams& p, double target_fmr) {
  std::vector<mcc::CylinderSet> enrolled;
  enrolled.reserve(static_cast<std::size_t>(corpus.identities));
  std::vector<Template> fingers;
  for (int i = 0; i < corpus.identities; ++i) {
    fingers.push_back(corpus_finger(corpus.seed, static_cast<std::uint64_t>(i), corpus.params));
    enrolled.push_back(mcc::build_cylinders(fingers.back(), p));
  }
  RocResult r;
  auto score = [&](const mcc::CylinderSet& a, const Template& probe) {
    const auto cyl = mcc::build_cylinders(probe, p);
    if (!mcc::has_enough_cylinders(cyl, p) || !mcc::has_enough_cylinders(a, p)) {
      ++r.genuine_unusable;
      return 0.0;
    }
    return mcc::match_score(a, cyl, p);
  };
  for (int i = 0; i < corpus.identities; ++i) {
    for (int s = 0; s < corpus.genuine_per_identity; ++s) {
      const auto probe = corpus_capture(fingers[static_cast<std::size_t>(i)], corpus.seed,
                                        static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(s), corpus.params);
      r.genuine.push_back(score(enrolled[static_cast<std::size_t>(i)], probe));
    }
  }
  std::mt19937_64 pick(derive_seed(corpus.seed, kImpostorPick, 0));
  for (int k = 0; k < corpus.impostor_trials; ++k) {
    GenerateOptions opts;
    opts.margin = corpus.params.margin;
    const Template stranger = quantize(generate_template(derive_seed(corpus.seed, kImpostorFinger, k),
                                                         corpus.params.minutiae, kDefaultImageSize,
                                                         kDefaultImageSize, opts));
    const Template probe = quantize(perturb(stranger, corpus.params.genuine, derive_seed(corpus.seed, kCapture, ~std::uint64_t(k))));
    const auto target = static_cast<std::size_t>(pick() % static_cast<std::uint64_t>(corpus.identities));
    const auto cyl = mcc::build_cylinders(probe, p);
    const bool usable = mcc::has_enough_cylinders(cyl, p) && mcc::has_enough_cylinders(enrolled[target], p);
    r.impostor.push_back(usable ? mcc::match_score(enrolled[target], cyl, p) : 0.0);
  }
  r.calibration = mcc::calibrate_threshold(r.genuine, r.impostor, target_fmr);
  return r;
}

BenchResult bench_match(std::size_t store_size, unsigned workers, std::uint64_t seed, std::size_t probes,
                        const mcc::MatcherParams& p) {
  if (store_size == 0) throw Error(ErrorCode::InvalidArgument, "store size must be at least 1");
  if (workers == 0 || probes == 0) throw Error(ErrorCode::InvalidArgument, "workers and probes must be at least 1");
  const CorpusParams cp;
  std::vector<mcc::CylinderSet> sets;
  sets.reserve(store_size);
  std::vector<Template> fingers;
  for (std::size_t i = 0; i < store_size; ++i) {
    fingers.push_back(corpus_finger(seed, i, cp));
    sets.push_back(mcc::build_cylinders(fingers.back(), p));
  }
  std::vector<mcc::GalleryEntry> gallery;
  for (std::size_t i = 0; i < store_size; ++i) {
    IdentityId id{};
    store_be64(id.data(), i);
    gallery.push_back(mcc::GalleryEntry{id, &sets[i]});
  }
  std::vector<mcc::CylinderSet> probe_sets;
  for (std::size_t k = 0; k < probes; ++k) {
    probe_sets.push_back(mcc::build_cylinders(corpus_capture(fingers[k % store_size], seed, k % store_size, k, cp), p));
  }

  auto pass = [&](unsigned w, std::vector<mcc::IdentificationResult>& out) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& probe : probe_sets) out.push_back(mcc::identify(probe, gallery, p, w));
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  BenchResult r;
  r.store_size = store_size;
  r.workers = workers;
  r.probes = probes;
  r.matches = static_cast<std::uint64_t>(store_size) * probes;
  std::vector<mcc::IdentificationResult> one, many;
  r.seconds_one = pass(1, one);
  r.seconds_workers = pass(workers, many);
  r.matches_per_second_one = static_cast<double>(r.matches) / r.seconds_one;
  r.matches_per_second = static_cast<double>(r.matches) / r.seconds_workers;
  r.speedup = r.seconds_one / r.seconds_workers;
  r.identical = one == many;
  return r;
}

// ---- PoS client -----------------------------------------------------------------

PosClient::PosClient(std::shared_ptr<wire::Keyring> keys, net::Network& net, wire::NodeId gateway,
                     net::Millis timeout)
    : keys_(std::move(keys)), net_(net), gateway_(gateway), timeout_(timeout) {}

wire::Message PosClient::authorize(const wire::Pin& pin, const TxnId& txn, std::int64_t amount,
                                   const MerchantId& merchant, Bytes template_bytes) {
  auto env = net::rpc(*keys_, net_, gateway_, pin, txn, wire::PosAuthReq{amount, merchant, std::move(template_bytes)},
                      timeout_);
  if (auto* n = std::get_if<wire::Nack>(&env.message)) net::raise_nack(*n);
  if (!std::holds_alternative<wire::Verdict>(env.message) && !std::holds_alternative<wire::AccountChoices>(env.message)) {
    throw Error(ErrorCode::Malformed, "unexpected reply " + std::string(wire::to_string(env.type)));
  }
  return env.message;
}

wire::Verdict PosClient::select(const wire::Pin& pin, const TxnId& txn, const AccountRef& account) {
  return net::expect<wire::Verdict>(net::rpc(*keys_, net_, gateway_, pin, txn, wire::AccountSelect{account}, timeout_));
}

// ---- deployment ---------------------------------------------------------------------

Deployment::Deployment(const config::Config& cfg, const Clock& clock) : cfg_(cfg) {
  gateway_ = config::build_gateway(cfg_, net_, clock);
  net_.attach(cfg_.gateway.node_id, *gateway_);
  for (const auto& s : cfg_.shards) {
    for (std::size_t m = 0; m < s.members.size(); ++m) {
      auto node = config::build_member(cfg_, s.index, static_cast<int>(m));
      net_.attach(s.members[m].node_id, *node);
      members_[{s.index, static_cast<int>(m)}] = std::move(node);
    }
    auto node = config::build_shard(cfg_, s.index, net_, clock);
    net_.attach(s.node_id, *node);
    shards_[s.index] = std::move(node);
  }
  for (const auto& i : cfg_.issuers) {
    auto node = config::build_issuer(cfg_, i.bank_id);
    net_.attach(i.node_id, *node);
    issuers_[i.bank_id] = std::move(node);
  }
}

shard::ShardServer& Deployment::shard(int index) {
  auto it = shards_.find(index);
  if (it == shards_.end()) throw Error(ErrorCode::InvalidArgument, "no shard " + std::to_string(index));
  return *it->second;
}

cluster::ClusterMember& Deployment::member(int index, int member) {
  auto it = members_.find({index, member});
  if (it == members_.end()) throw Error(ErrorCode::InvalidArgument, "no such cluster member");
  return *it->second;
}

issuer::IssuerBank& Deployment::issuer(const BankId& bank) {
  auto it = issuers_.find(bank);
  if (it == issuers_.end()) throw Error(ErrorCode::InvalidArgument, "no issuer " + to_hex(bank));
  return *it->second;
}

}  // namespace bionet::harness
