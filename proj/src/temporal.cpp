#include "mgtk/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mgtk {

namespace {
double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
}  // namespace

double cloglog_prob(double f, double delta) {
  if (!(delta > 0)) throw MgtkError("bin width must be positive");
  return -std::expm1(-delta * std::exp(f));
}

double link_prob(Link link, double f, double delta) {
  if (!(delta > 0)) throw MgtkError("bin width must be positive");
  switch (link) {
    case Link::Cloglog:
      return cloglog_prob(f, delta);
    case Link::Logistic:
      return 1.0 / (1.0 + std::exp(-f - std::log(delta)));
    case Link::Probit:
      return std_normal_cdf(f + std::log(delta));
  }
  throw MgtkError("unreachable");
}

double cloglog_inverse(double p, double delta) {
  if (!(delta > 0)) throw MgtkError("bin width must be positive");
  if (!(p > 0.0) || !(p < 1.0)) throw MgtkError("p must lie strictly in (0,1)");
  return std::log(-std::log1p(-p)) - std::log(delta);
}

double verify_partition_invariance(Link link, double f, double delta,
                                   int k_parts, std::uint64_t seed) {
  if (k_parts < 1) throw MgtkError("k_parts must be >= 1");
  if (!(delta > 0)) throw MgtkError("bin width must be positive");
  std::vector<double> parts(k_parts, delta);
  if (k_parts > 1) {
    auto rng = seeded_rng(seed, 0x59117);
    std::uniform_real_distribution<double> unit(0.05, 1.0);
    double total = 0;
    for (double& w : parts) {
      w = unit(rng);
      total += w;
    }
    for (double& w : parts) w *= delta / total;
  }
  const double survival_whole = 1.0 - link_prob(link, f, delta);
  double survival_split = 1.0;
  for (double w : parts) survival_split *= 1.0 - link_prob(link, f, w);
  return std::abs(survival_whole - survival_split);
}

void BinSchedule::validate() const {
  if (widths.empty()) throw MgtkError("empty bin schedule");
  for (double w : widths)
    if (!(w > 0) || !std::isfinite(w)) throw MgtkError("bin widths must be positive");
}

double BinSchedule::total() const {
  double t = 0;
  for (double w : widths) t += w;
  return t;
}

SimResult simulate_bin_events(const std::vector<double>& f_schedule,
                              const BinSchedule& bins, std::uint64_t seed) {
  bins.validate();
  if (f_schedule.size() != bins.widths.size())
    throw MgtkError("score schedule and bin schedule lengths differ");
  const int n = static_cast<int>(bins.widths.size());
  std::vector<double> rate(n);
  double rate_max = 0.0;
  for (int u = 0; u < n; ++u) {
    rate[u] = std::exp(clamp(f_schedule[u], -kScoreClamp, kScoreClamp));
    rate_max = std::max(rate_max, rate[u]);
  }
  std::vector<double> edges(n + 1, 0.0);
  for (int u = 0; u < n; ++u) edges[u + 1] = edges[u] + bins.widths[u];

  SimResult out;
  out.indicators.assign(n, 0);
  if (rate_max <= 0) return out;

  auto rng = seeded_rng(seed, 0x51312);
  std::poisson_distribution<long> pois(rate_max * edges[n]);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const long total_points = pois(rng);
  std::vector<double> pts(total_points);
  for (long i = 0; i < total_points; ++i) pts[i] = unit(rng) * edges[n];
  std::sort(pts.begin(), pts.end());

  int u = 0;
  for (double s : pts) {
    while (u + 1 < n && s >= edges[u + 1]) ++u;
    // thin the dominating process down to the bin's rate
    if (unit(rng) * rate_max <= rate[u]) {
      out.indicators[u] = 1;
      out.times.push_back(s);
    }
  }
  return out;
}

std::vector<int> merge_indicators(const std::vector<int>& fine, int factor) {
  if (factor < 1 || fine.size() % factor != 0)
    throw MgtkError("fine bin count must be a multiple of the merge factor");
  std::vector<int> coarse(fine.size() / factor, 0);
  for (size_t i = 0; i < fine.size(); ++i)
    if (fine[i]) coarse[i / factor] = 1;
  return coarse;
}

namespace {
double clamped_rate(double f, double delta) {
  return delta * std::exp(clamp(f, -kScoreClamp, kScoreClamp));
}
}  // namespace

double nll(const std::vector<PosTerm>& positives,
           const std::vector<NegTerm>& negatives, int k_neg) {
  if (k_neg < 1) throw MgtkError("k_neg must be >= 1");
  double total = 0.0;
  for (const PosTerm& p : positives) {
    if (!(p.delta > 0)) throw MgtkError("bin width must be positive");
    const double x = clamped_rate(p.f, p.delta);
    // -log(1 - exp(-x)), stable for both tails of x
    total -= std::log(-std::expm1(-x));
  }
  for (const NegTerm& ng : negatives) {
    if (!(ng.delta > 0)) throw MgtkError("bin width must be positive");
    if (!(ng.q > 0)) throw MgtkError("negative drawn with zero proposal probability");
    total += ng.weight * clamped_rate(ng.f, ng.delta) / (double(k_neg) * ng.q);
  }
  return total;
}

NllGradient nll_gradient(const std::vector<PosTerm>& positives,
                         const std::vector<NegTerm>& negatives, int k_neg) {
  if (k_neg < 1) throw MgtkError("k_neg must be >= 1");
  NllGradient g;
  g.d_pos.reserve(positives.size());
  g.d_neg.reserve(negatives.size());
  for (const PosTerm& p : positives) {
    if (!(p.delta > 0)) throw MgtkError("bin width must be positive");
    if (std::abs(p.f) >= kScoreClamp) {
      g.d_pos.push_back(0.0);  // clamped forward => flat
      continue;
    }
    const double x = clamped_rate(p.f, p.delta);
    // d/df [-log(1-e^{-x})] = -x e^{-x} / (1 - e^{-x})
    g.d_pos.push_back(-x * std::exp(-x) / (-std::expm1(-x)));
  }
  for (const NegTerm& ng : negatives) {
    if (!(ng.q > 0)) throw MgtkError("negative drawn with zero proposal probability");
    if (std::abs(ng.f) >= kScoreClamp) {
      g.d_neg.push_back(0.0);
      continue;
    }
    g.d_neg.push_back(ng.weight * clamped_rate(ng.f, ng.delta) /
                      (double(k_neg) * ng.q));
  }
  return g;
}

std::vector<SampledNegative> sample_negatives(const TemporalKG& kg, int h, int r,
                                              int u, int k_neg,
                                              std::uint64_t seed) {
  if (k_neg < 1) throw MgtkError("k_neg must be >= 1");
  const std::vector<int> pos = kg.positive_tails(h, r, u);
  std::vector<int> candidates;
  candidates.reserve(kg.n_entities());
  for (int t = 0; t < kg.n_entities(); ++t)
    if (!std::binary_search(pos.begin(), pos.end(), t)) candidates.push_back(t);
  if (candidates.empty())
    throw MgtkError("no non-positive tails available for negative sampling");
  const double q = 1.0 / double(candidates.size());
  auto rng = seeded_rng(seed, (std::uint64_t(h) << 40) ^ (std::uint64_t(r) << 20) ^
                                  std::uint64_t(u) ^ 0x9e90);
  std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
  std::vector<SampledNegative> out;
  out.reserve(k_neg);
  for (int i = 0; i < k_neg; ++i) out.push_back({candidates[pick(rng)], q});
  return out;
}

}  // namespace mgtk
