// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include "cooldrmc/ambiguity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "cooldrmc/rng.hpp"

namespace cooldrmc::ambiguity {

namespace {

double sq(double x) { return x * x; }

/// Tier rank: lower is stronger. Used to label derived sets with the
/// weakest source among their inputs.
int source_rank(ParamSource s) {
  switch (s) {
    case ParamSource::FiniteSample:
      return 0;
    case ParamSource::Concentration:
      return 1;
    case ParamSource::SupportCover:
      return 2;
  }
  return 2;
}

ParamSource weakest_source(ParamSource a, ParamSource b) {
  return source_rank(a) >= source_rank(b) ? a : b;
}

/// cov^{-1/2} together with the largest eigenvalue of cov^{-1/2}.
struct Whitener {
  Mat w;
  double op_norm = 0.0;
};

Whitener make_whitener(const Mat& cov) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (cov + cov.transpose()));
  const Vec& ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0) {
    throw NotPsd("whitened_support_radius: covariance must be positive definite");
  }
  Whitener out;
  Vec inv_sqrt = ev.cwiseSqrt().cwiseInverse();
  out.w = es.eigenvectors() * inv_sqrt.asDiagonal() *
          es.eigenvectors().transpose();
  out.op_norm = 1.0 / std::sqrt(ev.minCoeff());
  return out;
}

/// Vertices of a 2D H-polytope by pairwise row intersection.
std::vector<Vec> polytope_vertices_2d(const geometry::Polytope& p) {
  const int rows = static_cast<int>(p.e.rows());
  const double fscale = 1.0 + (rows > 0 ? p.f.cwiseAbs().maxCoeff() : 0.0);
  std::vector<Vec> verts;
  for (int i = 0; i < rows; ++i) {
    for (int j = i + 1; j < rows; ++j) {
      const double a = p.e(i, 0), b = p.e(i, 1);
      const double c = p.e(j, 0), d = p.e(j, 1);
      const double det = a * d - b * c;
      const double scale = p.e.row(i).norm() * p.e.row(j).norm();
      if (std::abs(det) <= 1e-12 * (1.0 + scale)) continue;
      Vec v(2);
      v << (p.f(i) * d - b * p.f(j)) / det, (a * p.f(j) - p.f(i) * c) / det;
      if (((p.e * v - p.f).array() > 1e-7 * fscale).any()) continue;
      bool duplicate = false;
      for (const Vec& u : verts) {
        if ((u - v).norm() < 1e-9) {
          duplicate = true;
          break;
        }
      }
      if (!duplicate) verts.push_back(v);
    }
  }
  return verts;
}

/// Largest whitened norm over the corners of an axis-aligned box.
double corner_radius(const Mat& w, const Vec& mean, const Vec& lo,
                     const Vec& hi) {
  const int d = static_cast<int>(lo.size());
  double best = 0.0;
  for (int mask = 0; mask < (1 << d); ++mask) {
    Vec corner(d);
    for (int a = 0; a < d; ++a) corner(a) = ((mask >> a) & 1) ? hi(a) : lo(a);
    best = std::max(best, (w * (corner - mean)).norm());
  }
  return best;
}

void gen_compositions(int m, int pos, int remaining, std::vector<int>& cur,
                      std::vector<Composition>& out) {
  if (pos == m - 1) {
    cur[pos] = remaining;
    out.push_back(Composition{cur});
    return;
  }
  for (int e = 0; e <= remaining; ++e) {
    cur[pos] = e;
    gen_compositions(m, pos + 1, remaining - e, cur, out);
  }
}

/// k! / (k_1! ... k_m!) evaluated stably as a product of small ratios.
double multinomial_coefficient(const std::vector<int>& exponents) {
  double res = 1.0;
  int s = 0;
  for (int e : exponents) {
    for (int j = 1; j <= e; ++j) {
      ++s;
      res *= static_cast<double>(s) / static_cast<double>(j);
    }
  }
  return res;
}

}  // namespace

// ---------------------------------------------------------------------------
// mixture set basics
// ---------------------------------------------------------------------------

int MixtureAmbiguitySet::dim() const {
  return components.empty() ? 0
                            : static_cast<int>(components.front().mean.size());
}

void MixtureAmbiguitySet::validate() const {
  if (components.empty()) {
    throw Error("mixture ambiguity set: no components");
  }
  if (weights.size() != static_cast<Eigen::Index>(components.size())) {
    throw Error("mixture ambiguity set: weight count mismatch");
  }
  if (weights.minCoeff() < -1e-9 || std::abs(weights.sum() - 1.0) > 1e-9) {
    throw Error("mixture ambiguity set: weights must lie on the simplex");
  }
  if (!(tv_radius >= 0.0 && tv_radius <= 2.0)) {
    throw Error("mixture ambiguity set: weight radius outside [0, 2]");
  }
  const int d = dim();
  for (const BasicAmbiguitySet& c : components) {
    if (static_cast<int>(c.mean.size()) != d || c.cov.rows() != d ||
        c.cov.cols() != d) {
      throw Error("mixture ambiguity set: component dimension mismatch");
    }
    if (geometry::dimension(c.support) != d) {
      throw Error("mixture ambiguity set: support dimension mismatch");
    }
    if (!(c.beta >= 0.0)) {
      throw Error("mixture ambiguity set: negative mean-bound parameter");
    }
    if (c.form == MomentForm::Scaled) {
      if (!(c.eps >= 0.0)) {
        throw Error("mixture ambiguity set: negative moment-bound parameter");
      }
    } else if (c.second_moment.rows() != d || c.second_moment.cols() != d) {
      throw Error("mixture ambiguity set: second-moment matrix size mismatch");
    }
  }
}

// ---------------------------------------------------------------------------
// finite-sample parameters
// ---------------------------------------------------------------------------

double finite_sample_theta(int m, double chi, long total_n) {
  if (m < 1) throw Error("finite_sample_theta: mode count must be >= 1");
  if (!(chi > 0.0 && chi < 1.0)) {
    throw Error("finite_sample_theta: confidence must lie in (0, 1)");
  }
  if (total_n < 2) {
    throw InsufficientData(
        "finite_sample_theta: needs at least two observations");
  }
  const double num = static_cast<double>(m) * std::log(2.0) - std::log1p(-chi);
  const double theta =
      2.0 * std::sqrt(num / (2.0 * (static_cast<double>(total_n) - 1.0)));
  return std::clamp(theta, 0.0, 2.0);
}

std::optional<BetaEps> finite_sample_beta_eps(long n, double r_hat,
                                              double alpha_comp, int dim) {
  if (!(alpha_comp > 0.0 && alpha_comp < 1.0)) {
    throw Error("finite_sample_beta_eps: confidence must lie in (0, 1)");
  }
  if (dim < 1) throw Error("finite_sample_beta_eps: dimension must be >= 1");
  if (n < 1 || !(r_hat > 0.0) || !std::isfinite(r_hat)) return std::nullopt;

  const double a_hat = 1.0 - std::sqrt(alpha_comp);
  const double ln_inv = std::log(1.0 / a_hat);
  const double ln_four = std::log(4.0 / a_hat);
  const double nn = static_cast<double>(n);

  // Sample-size condition.
  const double r2p2 = sq(r_hat) + 2.0;
  const double gate_a = sq(r2p2) * (2.0 + std::sqrt(2.0 * ln_inv));
  const double root_gap = std::sqrt(r_hat + 4.0) - r_hat;
  const double gap4 = sq(sq(root_gap));
  if (!(gap4 > 0.0)) return std::nullopt;
  const double gate_b = sq(8.0 + 32.0 * std::sqrt(32.0 * ln_four)) / gap4;
  if (!(nn > std::max(gate_a, gate_b))) return std::nullopt;

  // Inflated whitened radius.
  const double inner =
      1.0 - r2p2 * (2.0 + std::sqrt(2.0 * ln_four)) / std::sqrt(nn);
  if (!(inner > 0.0)) return std::nullopt;
  const double rbar2 = sq(r_hat) / inner;
  const double rbar4 = sq(rbar2);

  const double tail = std::max(0.0, 1.0 - static_cast<double>(dim) / rbar4);
  const double top = (rbar2 / nn) * sq(2.0 + std::sqrt(2.0 * ln_inv));
  const double mid =
      (rbar2 / std::sqrt(nn)) * (std::sqrt(tail) + std::sqrt(ln_inv));
  const double denom = 1.0 - mid - top;
  if (!(denom > 0.0)) return std::nullopt;

  BetaEps out;
  out.beta = top / denom;
  out.eps = (1.0 + top) / denom;
  return out;
}

double whitened_support_radius(const geometry::ConvexBody& support,
                               const Vec& mean, const Mat& cov) {
  const int d = static_cast<int>(mean.size());
  if (geometry::dimension(support) != d || cov.rows() != d || cov.cols() != d) {
    throw Error("whitened_support_radius: dimension mismatch");
  }
  const Whitener wh = make_whitener(cov);

  if (const auto* ball = std::get_if<geometry::Ball>(&support)) {
    return (wh.w * (ball->center - mean)).norm() + ball->radius * wh.op_norm;
  }
  if (const auto* box = std::get_if<geometry::Box>(&support)) {
    return corner_radius(wh.w, mean, box->lo, box->hi);
  }
  const auto& poly = std::get<geometry::Polytope>(support);
  // Bounding box first: raises UnboundedBody on unbounded supports.
  Vec lo(d), hi(d);
  for (int a = 0; a < d; ++a) {
    Vec e = Vec::Zero(d);
    e(a) = 1.0;
    hi(a) = geometry::support_function(support, e);
    lo(a) = -geometry::support_function(support, -e);
  }
  if (d == 2) {
    const std::vector<Vec> verts = polytope_vertices_2d(poly);
    if (!verts.empty()) {
      double best = 0.0;
      for (const Vec& v : verts) best = std::max(best, (wh.w * (v - mean)).norm());
      return best;
    }
  }
  return corner_radius(wh.w, mean, lo, hi);
}

MixtureAmbiguitySet build_ambiguity(const MixtureEstimate& est,
                                    const geometry::ConvexBody& support,
                                    const ConfidenceConfig& cfg) {
  if (est.components.empty()) {
    throw EmptyEstimate("build_ambiguity: estimate has no components");
  }
  const int m = static_cast<int>(est.components.size());
  double weight_sum = 0.0;
  for (const MixtureComponent& c : est.components) weight_sum += c.weight;
  if (!(weight_sum > 0.0)) {
    throw EmptyEstimate("build_ambiguity: estimate weights sum to zero");
  }

  MixtureAmbiguitySet out;
  out.weights = Vec(m);
  for (int i = 0; i < m; ++i) {
    out.weights(i) = est.components[i].weight / weight_sum;
  }
  // With fewer than two observations nothing constrains the weights, so the
  // radius covers the whole simplex.
  out.tv_radius = est.total_count >= 2
                      ? finite_sample_theta(m, cfg.chi, est.total_count)
                      : 2.0;

  const double a_hat = 1.0 - std::sqrt(cfg.alpha_comp);
  out.components.reserve(m);
  for (const MixtureComponent& comp : est.components) {
    BasicAmbiguitySet b;
    b.support = support;
    b.mean = comp.mean;
    b.cov = comp.cov;
    b.form = MomentForm::Scaled;
    const int d = static_cast<int>(comp.mean.size());
    const double r_hat = whitened_support_radius(support, comp.mean, comp.cov);

    if (auto fs =
            finite_sample_beta_eps(comp.count, r_hat, cfg.alpha_comp, d)) {
      b.beta = fs->beta;
      b.eps = fs->eps;
      b.source = ParamSource::FiniteSample;
    } else {
      bool have_surrogate = false;
      if (comp.count >= 2) {
        // Covariance-proportional surrogate from Gaussian concentration of
        // empirical moments; applicable once the relative moment error
        // delta stays below one.
        const double nn = static_cast<double>(comp.count);
        const double ln_two = std::log(2.0 / a_hat);
        const double delta =
            2.0 * (std::sqrt(static_cast<double>(d) / nn) +
                   std::sqrt(2.0 * ln_two / nn)) +
            2.0 * (static_cast<double>(d) + 2.0 * ln_two) / nn;
        if (delta < 1.0) {
          const boost::math::chi_squared_distribution<double> chi2(
              static_cast<double>(d));
          const double q = boost::math::quantile(chi2, 1.0 - a_hat);
          b.beta = (q / nn) / (1.0 - delta);
          b.eps = b.beta + 1.0 / (1.0 - delta);
          b.source = ParamSource::Concentration;
          have_surrogate = true;
        }
      }
      if (!have_surrogate) {
        // Support-covering parameterization: the mean ellipsoid and the
        // scaled second moment cover every distribution on the support.
        b.beta = sq(r_hat);
        b.eps = b.beta + 1.0;
        b.source = ParamSource::SupportCover;
      }
    }
    b.second_moment = b.eps * b.cov;
    out.components.push_back(std::move(b));
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// propagation
// ---------------------------------------------------------------------------

std::vector<Composition> enumerate_compositions(int m, int k) {
  if (m < 1) throw Error("enumerate_compositions: mode count must be >= 1");
  if (k < 0) throw Error("enumerate_compositions: step count must be >= 0");
  double count = 1.0;
  for (int i = 1; i <= m - 1; ++i) {
    count *= static_cast<double>(k + i) / static_cast<double>(i);
  }
  if (count > 1e6) {
    std::ostringstream os;
    os << "enumerate_compositions: " << m << " modes over " << k
       << " steps give about " << count << " combinations (limit 1e6)";
    throw TooManyCompositions(os.str());
  }
  std::vector<Composition> out;
  out.reserve(static_cast<std::size_t>(count + 0.5));
  std::vector<int> cur(m, 0);
  gen_compositions(m, 0, k, cur, out);
  return out;
}

MixtureAmbiguitySet propagate(const MixtureAmbiguitySet& base, const Vec& phi,
                              int k, const geometry::ConvexBody& support_k) {
  base.validate();
  if (k < 1) throw Error("propagate: step count must be >= 1");
  const int d = base.dim();
  if (static_cast<int>(phi.size()) != d) {
    throw Error("propagate: anchor dimension mismatch");
  }
  double max_gap = 0.0;
  for (const BasicAmbiguitySet& c : base.components) {
    if (c.form != MomentForm::Scaled) {
      throw Error("propagate: needs scaled-form components");
    }
    max_gap = std::max(max_gap, c.eps - c.beta);
  }

  const int m = static_cast<int>(base.components.size());
  const std::vector<Composition> comps = enumerate_compositions(m, k);

  MixtureAmbiguitySet out;
  out.weights = Vec(static_cast<Eigen::Index>(comps.size()));
  out.components.reserve(comps.size());
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const std::vector<int>& e = comps[j].exponents;
    double w = multinomial_coefficient(e);
    Vec mu = phi;
    Mat sig = Mat::Zero(d, d);
    double beta_j = 0.0;
    ParamSource src = ParamSource::FiniteSample;
    for (int i = 0; i < m; ++i) {
      if (e[i] == 0) continue;
      for (int t = 0; t < e[i]; ++t) w *= base.weights(i);
      const double ke = static_cast<double>(e[i]);
      mu += ke * base.components[i].mean;
      sig += ke * base.components[i].cov;
      beta_j += ke * base.components[i].beta;
      src = weakest_source(src, base.components[i].source);
    }
    out.weights(static_cast<Eigen::Index>(j)) = w;

    BasicAmbiguitySet bj;
    bj.support = support_k;
    bj.mean = mu;
    bj.cov = sig;
    bj.beta = beta_j;
    bj.form = MomentForm::Scaled;
    bj.eps = beta_j + max_gap;
    bj.second_moment = bj.eps * sig;
    bj.source = src;
    out.components.push_back(std::move(bj));
  }

  const double theta = base.tv_radius;
  const double grown =
      static_cast<double>(k) * theta *
      std::pow(1.0 + 2.0 * theta, static_cast<double>(k - 1));
  // Total variation distance never exceeds 2, so capping is sound.
  out.tv_radius = std::min(grown, 2.0);
  return out;
}

// ---------------------------------------------------------------------------
// compression
// ---------------------------------------------------------------------------

double gaussian_w2_squared(const Vec& mu1, const Mat& s1, const Vec& mu2,
                           const Mat& s2) {
  const Eigen::Index d = mu1.size();
  if (mu2.size() != d || s1.rows() != d || s1.cols() != d || s2.rows() != d ||
      s2.cols() != d) {
    throw Error("gaussian_w2_squared: dimension mismatch");
  }
  const double scale1 = 1.0 + s1.cwiseAbs().maxCoeff();
  const double scale2 = 1.0 + s2.cwiseAbs().maxCoeff();
  if (linalg::min_eigenvalue(s1) < -1e-9 * scale1 ||
      linalg::min_eigenvalue(s2) < -1e-9 * scale2) {
    throw NotPsd("gaussian_w2_squared: covariances must be positive "
                 "semidefinite");
  }
  const Mat r1 = linalg::psd_sqrt(s1);
  const Mat cross = linalg::psd_sqrt(r1 * s2 * r1);
  const double val = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() -
                     2.0 * cross.trace();
  return std::max(val, 0.0);
}

std::vector<std::vector<int>> cluster_components(
    const std::vector<BasicAmbiguitySet>& sets, int max_groups,
    std::uint64_t seed) {
  if (max_groups < 1) {
    throw Error("cluster_components: group budget must be >= 1");
  }
  const int n = static_cast<int>(sets.size());
  if (n == 0) throw Error("cluster_components: no components");

  std::vector<std::vector<int>> groups;
  if (n <= max_groups) {
    groups.reserve(n);
    for (int i = 0; i < n; ++i) groups.push_back({i});
    return groups;
  }

  Mat dist = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dd = gaussian_w2_squared(sets[i].mean, sets[i].cov,
                                            sets[j].mean, sets[j].cov);
      dist(i, j) = dd;
      dist(j, i) = dd;
    }
  }

  const int kk = max_groups;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> best_assign;
  std::vector<int> best_medoids;
  for (int restart = 0; restart < 20; ++restart) {
    Rng rng = Rng::derive(seed, {"kmedoids", restart});
    std::vector<int> medoids;
    std::vector<char> used(n, 0);
    while (static_cast<int>(medoids.size()) < kk) {
      const int c = static_cast<int>(rng.uniform_index(n));
      if (!used[c]) {
        used[c] = 1;
        medoids.push_back(c);
      }
    }
    std::sort(medoids.begin(), medoids.end());

    std::vector<int> assign(n, 0);
    double cost = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      cost = 0.0;
      for (int i = 0; i < n; ++i) {
        int best_g = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int g = 0; g < kk; ++g) {
          const double dd = dist(i, medoids[g]);
          if (dd < best_d) {
            best_d = dd;
            best_g = g;
          }
        }
        assign[i] = best_g;
        cost += best_d;
      }
      bool changed = false;
      for (int g = 0; g < kk; ++g) {
        std::vector<int> members;
        for (int i = 0; i < n; ++i) {
          if (assign[i] == g) members.push_back(i);
        }
        if (members.empty()) continue;
        int best_m = medoids[g];
        double best_sum = std::numeric_limits<double>::infinity();
        for (int cand : members) {
          double sum = 0.0;
          for (int i : members) sum += dist(cand, i);
          if (sum < best_sum) {
            best_sum = sum;
            best_m = cand;
          }
        }
        if (best_m != medoids[g]) {
          medoids[g] = best_m;
          changed = true;
        }
      }
      std::sort(medoids.begin(), medoids.end());
      if (!changed) break;
    }
    if (cost < best_cost) {
      best_cost = cost;
      best_assign = assign;
      best_medoids = medoids;
    }
  }

  for (int g = 0; g < kk; ++g) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (best_assign[i] == g) members.push_back(i);
    }
    if (!members.empty()) groups.push_back(std::move(members));
  }
  std::sort(groups.begin(), groups.end(),
            [](const std::vector<int>& a, const std::vector<int>& b) {
              return a.front() < b.front();
            });
  return groups;
}

RatioBounds weight_ratio_bounds(const Vec& weights, double tv_radius,
                                const std::vector<int>& group) {
  if (tv_radius < 0.0) {
    throw InvalidRadius("weight_ratio_bounds: negative weight radius");
  }
  const int m = static_cast<int>(weights.size());
  if (group.empty()) {
    throw InvalidGrouping("weight_ratio_bounds: empty group");
  }
  std::vector<char> seen(m, 0);
  for (int j : group) {
    if (j < 0 || j >= m) {
      throw InvalidGrouping("weight_ratio_bounds: index out of range");
    }
    if (seen[j]++) {
      throw InvalidGrouping("weight_ratio_bounds: duplicate index");
    }
  }
  if (weights.minCoeff() < -1e-9 || std::abs(weights.sum() - 1.0) > 1e-6) {
    throw Error("weight_ratio_bounds: weights must lie on the simplex");
  }

  const int gsz = static_cast<int>(group.size());
  RatioBounds out;
  out.gamma_breve = Vec::Zero(gsz);
  if (gsz == 1) {
    // A single member always carries the whole group weight.
    out.gamma_bar = 1.0;
    return out;
  }

  double wg = 0.0;
  for (int j : group) wg += weights(j);
  const double half = tv_radius / 2.0;

  // The worst case moves mass between a member, its siblings in the group,
  // and the outside; shifting sibling weight onto the member dominates every
  // other move for the maximum (and the reverse for the minimum), which
  // yields the ratios in closed form.
  double gamma_bar = 0.0;
  for (int p = 0; p < gsz; ++p) {
    const double wj = weights(group[p]);
    const double nominal = wg > 1e-15 ? wj / wg : 1.0 / gsz;
    double r_max = nominal;
    double r_min = nominal;
    if (tv_radius > 0.0) {
      if (wg > 1e-15) {
        r_max = std::min(1.0, (wj + half) / wg);
        r_min = std::max(0.0, (wj - half) / wg);
      } else {
        r_max = 1.0;
        r_min = 0.0;
      }
    }
    out.gamma_breve(p) = std::max({r_max - nominal, nominal - r_min, 0.0});
    gamma_bar = std::max(gamma_bar, r_max);
  }
  out.gamma_bar = std::min(gamma_bar, 1.0);
  return out;
}

MixtureAmbiguitySet compress(const MixtureAmbiguitySet& set,
                             const std::vector<std::vector<int>>& grouping) {
  set.validate();
  const int m = static_cast<int>(set.components.size());
  std::vector<char> seen(m, 0);
  for (const std::vector<int>& g : grouping) {
    if (g.empty()) throw InvalidGrouping("compress: empty group");
    for (int j : g) {
      if (j < 0 || j >= m) {
        throw InvalidGrouping("compress: index out of range");
      }
      if (seen[j]++) throw InvalidGrouping("compress: duplicate index");
    }
  }
  for (int j = 0; j < m; ++j) {
    if (!seen[j]) throw InvalidGrouping("compress: missing index");
  }
  for (const BasicAmbiguitySet& c : set.components) {
    if (c.form != MomentForm::Scaled) {
      throw Error("compress: needs scaled-form components");
    }
  }

  const int d = set.dim();
  MixtureAmbiguitySet out;
  out.tv_radius = set.tv_radius;
  out.weights = Vec(static_cast<Eigen::Index>(grouping.size()));
  out.components.reserve(grouping.size());

  for (std::size_t n = 0; n < grouping.size(); ++n) {
    const std::vector<int>& group = grouping[n];
    double wsum = 0.0;
    for (int j : group) wsum += set.weights(j);
    out.weights(static_cast<Eigen::Index>(n)) = wsum;

    const RatioBounds rb = weight_ratio_bounds(set.weights, set.tv_radius, group);

    Vec mu_t = Vec::Zero(d);
    if (wsum > 1e-15) {
      for (int j : group) mu_t += set.weights(j) * set.components[j].mean;
      mu_t /= wsum;
    } else {
      for (int j : group) mu_t += set.components[j].mean;
      mu_t /= static_cast<double>(group.size());
    }

    double beta_t = 0.0;
    Mat sig_t = Mat::Zero(d, d);
    ParamSource src = ParamSource::FiniteSample;
    for (std::size_t p = 0; p < group.size(); ++p) {
      const BasicAmbiguitySet& c = set.components[group[p]];
      beta_t += rb.gamma_bar * c.beta + rb.gamma_breve(static_cast<Eigen::Index>(p));
      sig_t += rb.gamma_bar * c.cov +
               rb.gamma_breve(static_cast<Eigen::Index>(p)) *
                   (c.mean * c.mean.transpose());
      src = weakest_source(src, c.source);
    }

    Mat phi_t = 4.0 * beta_t * sig_t;
    for (int j : group) {
      const BasicAmbiguitySet& c = set.components[j];
      const Vec dm = c.mean - mu_t;
      phi_t += rb.gamma_bar *
               ((c.eps + 2.0 * c.beta) * c.cov + 3.0 * dm * dm.transpose());
    }

    // Merged support: bounding box of the member supports.
    Vec lo(d), hi(d);
    for (int a = 0; a < d; ++a) {
      Vec e = Vec::Zero(d);
      e(a) = 1.0;
      double hi_a = -std::numeric_limits<double>::infinity();
      double lo_a = std::numeric_limits<double>::infinity();
      for (int j : group) {
        hi_a = std::max(hi_a,
                        geometry::support_function(set.components[j].support, e));
        lo_a = std::min(lo_a, -geometry::support_function(
                                  set.components[j].support, -e));
      }
      hi(a) = hi_a;
      lo(a) = lo_a;
    }

    BasicAmbiguitySet merged;
    merged.support = geometry::Box{lo, hi};
    merged.mean = mu_t;
    merged.cov = sig_t;
    merged.beta = beta_t;
    merged.form = MomentForm::Explicit;
    merged.eps = 0.0;
    merged.second_moment = phi_t;
    merged.source = src;
    out.components.push_back(std::move(merged));
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// membership oracles
// ---------------------------------------------------------------------------

bool moments_member(const BasicAmbiguitySet& set, const Vec& mu,
                    const Mat& cov, double tol) {
  const Vec dm = mu - set.mean;
  const double quad = dm.dot(linalg::spd_inverse(set.cov) * dm);
  if (quad > set.beta + tol * (1.0 + std::abs(set.beta))) return false;
  const Mat second = cov + dm * dm.transpose();
  const Mat bound = set.form == MomentForm::Scaled ? Mat(set.eps * set.cov)
                                                   : set.second_moment;
  const double scale = 1.0 + bound.cwiseAbs().maxCoeff();
  return linalg::psd_leq(second, bound, tol * scale);
}

bool mixture_member(const MixtureAmbiguitySet& set, const Vec& weights,
                    const std::vector<Vec>& means,
                    const std::vector<Mat>& covs, double tol) {
  const int m = static_cast<int>(set.components.size());
  if (static_cast<int>(weights.size()) != m ||
      static_cast<int>(means.size()) != m ||
      static_cast<int>(covs.size()) != m) {
    return false;
  }
  if (weights.minCoeff() < -tol || std::abs(weights.sum() - 1.0) > tol) {
    return false;
  }
  if ((weights - set.weights).lpNorm<1>() > set.tv_radius + tol) return false;
  for (int i = 0; i < m; ++i) {
    if (!moments_member(set.components[i], means[i], covs[i], tol)) {
      return false;
    }
  }
  return true;
}

}  // namespace cooldrmc::ambiguity
