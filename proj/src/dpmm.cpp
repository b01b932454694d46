// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include "cooldrmc/dpmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <json.hpp>
#include <boost/math/special_functions/digamma.hpp>

#include "cooldrmc/rng.hpp"

namespace cooldrmc::dpmm {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kSymTol = 1e-9;
constexpr double kPsdTol = 1e-9;
constexpr double kCovRidge = 1e-6;
constexpr int kMaxSweeps = 200;
constexpr double kSweepRelTol = 1e-6;

double digamma(double x) { return boost::math::digamma(x); }

/// log of the multivariate gamma function.
double mvlgamma(double x, int d) {
  double out = 0.25 * d * (d - 1) * std::log(M_PI);
  for (int i = 0; i < d; ++i) out += std::lgamma(x - 0.5 * i);
  return out;
}

bool finite(const Vec& v) { return v.allFinite(); }
bool finite(const Mat& m) { return m.allFinite(); }

Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// (x - m)' P (x - m) for symmetric P, free of temporaries.
double quad_diff(const Mat& p, const Vec& x, const Vec& m) {
  const int d = static_cast<int>(x.size());
  double q = 0.0;
  for (int a = 0; a < d; ++a) {
    const double da = x(a) - m(a);
    q += p(a, a) * da * da;
    for (int b = a + 1; b < d; ++b) {
      q += 2.0 * p(a, b) * da * (x(b) - m(b));
    }
  }
  return q;
}

/// tr(P S) for symmetric P and S, free of temporaries.
double sym_dot(const Mat& p, const Mat& s) {
  const int d = static_cast<int>(p.rows());
  double t = 0.0;
  for (int a = 0; a < d; ++a) {
    t += p(a, a) * s(a, a);
    for (int b = a + 1; b < d; ++b) t += 2.0 * p(a, b) * s(a, b);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Inference units
// ---------------------------------------------------------------------------

/// One block of the fit: a clump, a retained singlet, or the new point.
/// `scatter` is the unnormalized second central moment (count * sigma);
/// `point` marks raw observations whose scatter is identically zero.
struct Unit {
  Vec mean;
  Mat scatter;
  double count = 0.0;
  std::int64_t icount = 0;
  bool point = false;
};

std::vector<Unit> units_of(const LearningStructure& s) {
  std::vector<Unit> units;
  units.reserve(s.clumps.size() + s.singlets.size());
  for (const Clump& c : s.clumps) {
    const double n = static_cast<double>(c.count);
    units.push_back({c.mean, n * symmetrized(c.sigma), n, c.count, false});
  }
  for (const Vec& x : s.singlets) {
    units.push_back({x, Mat::Zero(x.size(), x.size()), 1.0, 1, true});
  }
  return units;
}

// ---------------------------------------------------------------------------
// Base measure and component posteriors
// ---------------------------------------------------------------------------

struct Prior {
  Vec m0;
  double kappa0 = 0.0;
  double nu0 = 0.0;
  Mat psi0;
  double logdet_psi0 = 0.0;
  int d = 0;
};

Prior resolve_prior(const DpmmConfig& cfg, const Vec& first_mean) {
  Prior pr;
  pr.d = static_cast<int>(first_mean.size());
  pr.m0 = cfg.prior_mean ? *cfg.prior_mean : first_mean;
  pr.kappa0 = cfg.prior_scale;
  pr.nu0 = cfg.prior_dof < 0.0 ? pr.d + 2.0 : cfg.prior_dof;
  pr.psi0 = cfg.prior_scatter ? symmetrized(*cfg.prior_scatter)
                              : Mat(0.01 * Mat::Identity(pr.d, pr.d));
  pr.logdet_psi0 = linalg::logdet_spd(pr.psi0);
  return pr;
}

struct Component {
  double n = 0.0;
  double kappa = 0.0;
  double nu = 0.0;
  Vec m;
  Mat psi;
  Mat psi_inv;
  double logdet_psi = 0.0;
  /// E[log det precision] under the component posterior.
  double elogdet = 0.0;
  /// E[log mixture share] from the stick posteriors.
  double elogpi = 0.0;
  /// Per-point constant of the expected log density.
  double per_point = 0.0;
};

Component posterior_from(const Prior& pr, double n, const Vec& xbar,
                         const Mat& scatter) {
  Component c;
  c.n = n;
  c.kappa = pr.kappa0 + n;
  c.nu = pr.nu0 + n;
  if (n > 0.0) {
    c.m = (pr.kappa0 * pr.m0 + n * xbar) / c.kappa;
    const Vec dm = xbar - pr.m0;
    c.psi = symmetrized(pr.psi0 + scatter +
                        (pr.kappa0 * n / c.kappa) * dm * dm.transpose());
  } else {
    c.m = pr.m0;
    c.psi = pr.psi0;
  }
  Eigen::LLT<Mat> llt(c.psi);
  if (llt.info() != Eigen::Success) {
    throw Error("dpmm: component scale matrix is not positive definite");
  }
  c.logdet_psi =
      2.0 * llt.matrixLLT().diagonal().array().log().sum();
  c.psi_inv = llt.solve(Mat::Identity(pr.d, pr.d));
  c.elogdet = pr.d * M_LN2 - c.logdet_psi;
  for (int i = 0; i < pr.d; ++i) c.elogdet += digamma(0.5 * (c.nu - i));
  c.per_point = 0.5 * c.elogdet - 0.5 * pr.d * kLog2Pi - 0.5 * pr.d / c.kappa;
  return c;
}

/// Expected log density of a whole block under one component, i.e.
/// E_q[sum over the block's points of log N(x | mean, cov)]. Pass a null
/// scatter for raw points.
double block_loglik(const Component& c, const Vec& mean, const Mat* scatter,
                    double count) {
  double s = count * c.per_point -
             0.5 * c.nu * count * quad_diff(c.psi_inv, mean, c.m);
  if (scatter != nullptr) s -= 0.5 * c.nu * sym_dot(c.psi_inv, *scatter);
  return s;
}

double lbeta(double x, double y) {
  return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y);
}

/// Fills elogpi for all components from the stick posteriors implied by
/// the soft counts and returns the summed KL of the stick posteriors
/// against their Beta(1, alpha) priors. K components use K - 1 sticks;
/// the last component takes the leftover stick mass.
double update_sticks(std::vector<Component>& comps, double alpha) {
  const int k = static_cast<int>(comps.size());
  if (k == 1) {
    comps[0].elogpi = 0.0;
    return 0.0;
  }
  std::vector<double> suffix(k + 1, 0.0);
  for (int t = k - 1; t >= 0; --t) suffix[t] = suffix[t + 1] + comps[t].n;
  const double lbeta_prior = lbeta(1.0, alpha);
  double acc = 0.0;
  double kl = 0.0;
  for (int t = 0; t < k; ++t) {
    if (t == k - 1) {
      comps[t].elogpi = acc;
      break;
    }
    const double a = 1.0 + comps[t].n;
    const double b = alpha + suffix[t + 1];
    const double da = digamma(a);
    const double db = digamma(b);
    const double dab = digamma(a + b);
    comps[t].elogpi = acc + da - dab;
    acc += db - dab;
    kl += lbeta_prior - lbeta(a, b) + (a - 1.0) * da + (b - alpha) * db +
          (1.0 + alpha - a - b) * dab;
  }
  return kl;
}

double niw_kl(const Component& c, const Prior& pr) {
  const int d = pr.d;
  const double kl_normal =
      0.5 * (d * pr.kappa0 / c.kappa - d + d * std::log(c.kappa / pr.kappa0) +
             pr.kappa0 * c.nu * quad_diff(c.psi_inv, c.m, pr.m0));
  const double elog_sigma = -c.elogdet;
  const double kl_iw = 0.5 * c.nu * c.logdet_psi -
                       0.5 * pr.nu0 * pr.logdet_psi0 -
                       0.5 * (c.nu - pr.nu0) * d * M_LN2 -
                       mvlgamma(0.5 * c.nu, d) + mvlgamma(0.5 * pr.nu0, d) -
                       0.5 * (c.nu - pr.nu0) * elog_sigma - 0.5 * c.nu * d +
                       0.5 * c.nu * sym_dot(pr.psi0, c.psi_inv);
  return kl_normal + kl_iw;
}

// ---------------------------------------------------------------------------
// Model building: seeded coordinate ascent
// ---------------------------------------------------------------------------

struct Fit {
  std::vector<Component> comps;
  std::vector<int> hard;
  std::vector<double> sweep_objective;
  double objective = -std::numeric_limits<double>::infinity();
  bool converged = false;
};

/// Count-weighted farthest-first seeding over unit means.
std::vector<int> seed_assignment(const std::vector<Unit>& units, int k_init,
                                 Rng& rng) {
  const int u = static_cast<int>(units.size());
  std::vector<double> w(u);
  for (int i = 0; i < u; ++i) w[i] = units[i].count;
  std::vector<Vec> seeds;
  seeds.push_back(units[rng.categorical(w)].mean);
  std::vector<double> d2(u);
  for (int i = 0; i < u; ++i) {
    d2[i] = (units[i].mean - seeds[0]).squaredNorm();
  }
  while (static_cast<int>(seeds.size()) < k_init) {
    std::vector<double> probs(u);
    double total = 0.0;
    for (int i = 0; i < u; ++i) {
      probs[i] = w[i] * d2[i];
      total += probs[i];
    }
    if (total <= 0.0) break;
    seeds.push_back(units[rng.categorical(probs)].mean);
    for (int i = 0; i < u; ++i) {
      d2[i] = std::min(d2[i], (units[i].mean - seeds.back()).squaredNorm());
    }
  }
  std::vector<int> assign(u, 0);
  for (int i = 0; i < u; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < static_cast<int>(seeds.size()); ++j) {
      const double dist = (units[i].mean - seeds[j]).squaredNorm();
      if (dist < best) {
        best = dist;
        assign[i] = j;
      }
    }
  }
  return assign;
}

Fit run_start(const std::vector<Unit>& units, const Prior& pr,
              const DpmmConfig& cfg, int k, int k_init, Rng rng) {
  const int u = static_cast<int>(units.size());
  const int d = pr.d;
  Mat resp = Mat::Zero(u, k);
  {
    const std::vector<int> assign = seed_assignment(units, k_init, rng);
    for (int i = 0; i < u; ++i) resp(i, assign[i]) = 1.0;
  }

  Fit fit;
  fit.comps.resize(k);
  const Component empty_comp = posterior_from(pr, 0.0, Vec(), Mat());
  const double kl_empty = niw_kl(empty_comp, pr);
  Mat scores(u, k);
  Vec xbar(d);
  Mat scatter(d, d);
  double prev = 0.0;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    // Component posteriors from responsibility-weighted block statistics.
    for (int t = 0; t < k; ++t) {
      double n = 0.0;
      xbar.setZero();
      for (int i = 0; i < u; ++i) {
        const double w = resp(i, t) * units[i].count;
        if (w == 0.0) continue;
        n += w;
        for (int a = 0; a < d; ++a) xbar[a] += w * units[i].mean[a];
      }
      if (n > 0.0) {
        xbar /= n;
        scatter.setZero();
        for (int i = 0; i < u; ++i) {
          const double r = resp(i, t);
          if (r == 0.0) continue;
          const Unit& ui = units[i];
          const double w = r * ui.count;
          for (int a = 0; a < d; ++a) {
            const double da = ui.mean[a] - xbar[a];
            for (int b = 0; b <= a; ++b) {
              scatter(a, b) += w * da * (ui.mean[b] - xbar[b]);
            }
          }
          if (!ui.point) {
            for (int a = 0; a < d; ++a) {
              for (int b = 0; b <= a; ++b) {
                scatter(a, b) += r * ui.scatter(a, b);
              }
            }
          }
        }
        for (int a = 0; a < d; ++a) {
          for (int b = 0; b < a; ++b) scatter(b, a) = scatter(a, b);
        }
        fit.comps[t] = posterior_from(pr, n, xbar, scatter);
      } else {
        fit.comps[t] = empty_comp;
      }
    }
    const double stick_kl = update_sticks(fit.comps, cfg.concentration);

    // Block responsibilities. Scores already below the sparsification
    // floor relative to the row maximum are zeroed without exponentiating;
    // the later threshold pass would discard them regardless.
    const double floor_gap = cfg.assign_tol > 0.0
                                 ? std::log(cfg.assign_tol)
                                 : -std::numeric_limits<double>::infinity();
    for (int i = 0; i < u; ++i) {
      const Unit& ui = units[i];
      const Mat* sc = ui.point ? nullptr : &ui.scatter;
      for (int t = 0; t < k; ++t) {
        scores(i, t) = ui.count * fit.comps[t].elogpi +
                       block_loglik(fit.comps[t], ui.mean, sc, ui.count);
      }
      const double top = scores.row(i).maxCoeff();
      double denom = 0.0;
      for (int t = 0; t < k; ++t) {
        const double gap = scores(i, t) - top;
        if (gap < floor_gap) {
          resp(i, t) = 0.0;
          continue;
        }
        resp(i, t) = std::exp(gap);
        denom += resp(i, t);
      }
      resp.row(i) /= denom;
      if (cfg.assign_tol > 0.0) {
        double kept = 0.0;
        for (int t = 0; t < k; ++t) {
          if (resp(i, t) < cfg.assign_tol) resp(i, t) = 0.0;
          kept += resp(i, t);
        }
        resp.row(i) /= kept;
      }
    }

    // Variational objective: expected log joint plus assignment entropy
    // minus the stick and component KL terms.
    double objective = 0.0;
    for (int i = 0; i < u; ++i) {
      for (int t = 0; t < k; ++t) {
        const double r = resp(i, t);
        if (r > 0.0) objective += r * (scores(i, t) - std::log(r));
      }
    }
    objective -= stick_kl;
    for (int t = 0; t < k; ++t) {
      objective -= fit.comps[t].n > 0.0 ? niw_kl(fit.comps[t], pr) : kl_empty;
    }

    fit.sweep_objective.push_back(objective);
    if (sweep > 0 &&
        objective - prev < kSweepRelTol * (1.0 + std::abs(objective))) {
      fit.converged = true;
      break;
    }
    prev = objective;
  }

  fit.objective = fit.sweep_objective.back();
  fit.hard.resize(u);
  for (int i = 0; i < u; ++i) {
    int best = 0;
    for (int t = 1; t < k; ++t) {
      if (resp(i, t) > resp(i, best)) best = t;
    }
    fit.hard[i] = best;
  }
  return fit;
}

/// Runs coordinate ascent from several seeded initializations of
/// increasing richness and keeps the best final objective.
Fit fit_units(const std::vector<Unit>& units, const Prior& pr,
              const DpmmConfig& cfg, std::int64_t total_count) {
  const int u = static_cast<int>(units.size());
  const int k = std::min({cfg.truncation, cfg.budget, u});
  Fit best;
  bool have = false;
  for (int k_init : {1, 2, 4, 8, 16}) {
    if (k_init > k) break;
    Rng rng = Rng::derive(cfg.seed,
                          {"dpmm-init", static_cast<std::uint64_t>(total_count),
                           static_cast<std::uint64_t>(k_init)});
    Fit fit = run_start(units, pr, cfg, k, k_init, rng);
    if (!have || fit.objective > best.objective) {
      best = std::move(fit);
      have = true;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Compression: greedy partition refinement under the memory budget
// ---------------------------------------------------------------------------

struct CellStats {
  double n = 0.0;
  Vec mean;
  Mat scatter;
};

CellStats pool(const std::vector<Unit>& units, const std::vector<int>& ids) {
  CellStats cs;
  const int d = static_cast<int>(units[ids[0]].mean.size());
  cs.mean = Vec::Zero(d);
  for (int id : ids) {
    cs.n += units[id].count;
    cs.mean += units[id].count * units[id].mean;
  }
  cs.mean /= cs.n;
  cs.scatter = Mat::Zero(d, d);
  for (int id : ids) {
    const Unit& ui = units[id];
    for (int a = 0; a < d; ++a) {
      const double da = ui.mean[a] - cs.mean[a];
      for (int b = 0; b <= a; ++b) {
        cs.scatter(a, b) += ui.count * da * (ui.mean[b] - cs.mean[b]);
      }
    }
    if (!ui.point) {
      for (int a = 0; a < d; ++a) {
        for (int b = 0; b <= a; ++b) cs.scatter(a, b) += ui.scatter(a, b);
      }
    }
  }
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < a; ++b) cs.scatter(b, a) = cs.scatter(a, b);
  }
  return cs;
}

/// Best expected log joint the cell can reach as one block.
double affinity(const CellStats& cs, const std::vector<Component>& comps) {
  double best = -std::numeric_limits<double>::infinity();
  for (const Component& c : comps) {
    const double s =
        cs.n * c.elogpi + block_loglik(c, cs.mean, &cs.scatter, cs.n);
    best = std::max(best, s);
  }
  return best;
}

/// Deterministic two-group Lloyd split of the cell's units in whitened
/// coordinates, seeded by the farthest pair. Empty when the cell cannot
/// split (single unit or coincident means).
std::optional<std::pair<std::vector<int>, std::vector<int>>> propose_split(
    const std::vector<Unit>& units, const std::vector<int>& ids,
    const CellStats& cs) {
  const int m = static_cast<int>(ids.size());
  if (m < 2) return std::nullopt;
  const int d = static_cast<int>(cs.mean.size());

  Mat cov = cs.scatter / cs.n;
  const double ridge = 1e-12 + 1e-9 * cov.trace() / d;
  cov.diagonal().array() += ridge;
  Mat white;
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() == Eigen::Success) {
    white = llt.matrixL().solve(Mat::Identity(d, d));
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    white = es.eigenvalues().cwiseMax(ridge).cwiseSqrt().cwiseInverse()
                .asDiagonal() *
            es.eigenvectors().transpose();
  }
  std::vector<Vec> z(m);
  for (int i = 0; i < m; ++i) z[i] = white * (units[ids[i]].mean - cs.mean);

  int ia = 0;
  int ib = 1;
  double far = -1.0;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const double dist = (z[i] - z[j]).squaredNorm();
      if (dist > far) {
        far = dist;
        ia = i;
        ib = j;
      }
    }
  }
  std::vector<int> side(m, 0);
  if (far <= 0.0) {
    // Coincident means: peel off the first unit to keep splits possible.
    side[0] = 1;
  } else {
    Vec ca = z[ia];
    Vec cb = z[ib];
    for (int iter = 0; iter < 50; ++iter) {
      bool changed = false;
      for (int i = 0; i < m; ++i) {
        const int s = (z[i] - cb).squaredNorm() < (z[i] - ca).squaredNorm()
                          ? 1
                          : 0;
        if (s != side[i]) {
          side[i] = s;
          changed = true;
        }
      }
      if (!changed) break;
      Vec suma = Vec::Zero(d);
      Vec sumb = Vec::Zero(d);
      double wa = 0.0;
      double wb = 0.0;
      for (int i = 0; i < m; ++i) {
        if (side[i] == 0) {
          suma += units[ids[i]].count * z[i];
          wa += units[ids[i]].count;
        } else {
          sumb += units[ids[i]].count * z[i];
          wb += units[ids[i]].count;
        }
      }
      if (wa <= 0.0 || wb <= 0.0) break;
      ca = suma / wa;
      cb = sumb / wb;
    }
  }
  std::vector<int> left;
  std::vector<int> right;
  for (int i = 0; i < m; ++i) {
    (side[i] == 0 ? left : right).push_back(ids[i]);
  }
  if (left.empty() || right.empty()) return std::nullopt;
  return std::make_pair(std::move(left), std::move(right));
}

struct Cell {
  std::vector<int> ids;
  CellStats stats;
  double aff = 0.0;
  /// Cached best split proposal and its objective change.
  std::optional<std::pair<std::vector<int>, std::vector<int>>> split;
  double delta = -std::numeric_limits<double>::infinity();
};

Cell make_cell(std::vector<int> ids, const std::vector<Unit>& units,
               const std::vector<Component>& comps) {
  Cell cell;
  cell.ids = std::move(ids);
  cell.stats = pool(units, cell.ids);
  cell.aff = affinity(cell.stats, comps);
  cell.split = propose_split(units, cell.ids, cell.stats);
  if (cell.split) {
    const double left = affinity(pool(units, cell.split->first), comps);
    const double right = affinity(pool(units, cell.split->second), comps);
    cell.delta = left + right - cell.aff;
  }
  return cell;
}

/// Splits cells greedily by objective change (largest first, then largest
/// cell) until the budget is reached or no cell can split.
std::vector<Cell> refine_cells(std::vector<Cell> cells,
                               const std::vector<Unit>& units,
                               const std::vector<Component>& comps,
                               int budget) {
  while (static_cast<int>(cells.size()) < budget) {
    int pick = -1;
    for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
      if (!cells[i].split) continue;
      if (pick < 0 || cells[i].delta > cells[pick].delta ||
          (cells[i].delta == cells[pick].delta &&
           cells[i].stats.n > cells[pick].stats.n)) {
        pick = i;
      }
    }
    if (pick < 0) break;
    auto split = std::move(*cells[pick].split);
    cells[pick] = make_cell(std::move(split.first), units, comps);
    cells.push_back(make_cell(std::move(split.second), units, comps));
  }
  return cells;
}

/// Rebuilds a learning structure from the final cells. Single-unit cells
/// pass their summary through unchanged; larger cells pool into a clump.
LearningStructure emit_structure(const std::vector<Cell>& cells,
                                 const std::vector<Unit>& units,
                                 const LearningStructure& input,
                                 const Vec* new_obs) {
  std::vector<int> order(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return *std::min_element(cells[a].ids.begin(), cells[a].ids.end()) <
           *std::min_element(cells[b].ids.begin(), cells[b].ids.end());
  });

  const int n_clumps = static_cast<int>(input.clumps.size());
  LearningStructure out;
  for (int idx : order) {
    const Cell& cell = cells[idx];
    if (cell.ids.size() == 1) {
      const int id = cell.ids[0];
      if (id < n_clumps) {
        out.clumps.push_back(input.clumps[id]);
      } else if (id < n_clumps + static_cast<int>(input.singlets.size())) {
        out.singlets.push_back(input.singlets[id - n_clumps]);
      } else {
        out.singlets.push_back(*new_obs);
      }
      continue;
    }
    Clump clump;
    clump.mean = cell.stats.mean;
    clump.sigma = symmetrized(cell.stats.scatter / cell.stats.n);
    clump.count = 0;
    for (int id : cell.ids) clump.count += units[id].icount;
    out.clumps.push_back(std::move(clump));
  }
  return out;
}

std::vector<Cell> cells_from_hard(const Fit& fit,
                                  const std::vector<Unit>& units) {
  const int k = static_cast<int>(fit.comps.size());
  std::vector<std::vector<int>> groups(k);
  for (int i = 0; i < static_cast<int>(units.size()); ++i) {
    groups[fit.hard[i]].push_back(i);
  }
  std::vector<Cell> cells;
  for (int t = 0; t < k; ++t) {
    if (!groups[t].empty()) {
      cells.push_back(make_cell(std::move(groups[t]), units, fit.comps));
    }
  }
  return cells;
}

}  // namespace

// ---------------------------------------------------------------------------
// LearningStructure
// ---------------------------------------------------------------------------

std::int64_t LearningStructure::total_count() const {
  std::int64_t n = static_cast<std::int64_t>(singlets.size());
  for (const Clump& c : clumps) n += c.count;
  return n;
}

int LearningStructure::dim() const {
  if (!clumps.empty()) return static_cast<int>(clumps[0].mean.size());
  if (!singlets.empty()) return static_cast<int>(singlets[0].size());
  return 0;
}

void LearningStructure::validate() const {
  const int d = dim();
  for (const Clump& c : clumps) {
    if (c.count < 1) {
      throw MalformedStructure("learning structure: clump count must be >= 1");
    }
    if (c.mean.size() != d || c.sigma.rows() != d || c.sigma.cols() != d) {
      throw MalformedStructure("learning structure: inconsistent dimensions");
    }
    if (!finite(c.mean) || !finite(c.sigma)) {
      throw MalformedStructure("learning structure: non-finite clump entry");
    }
    if ((c.sigma - c.sigma.transpose()).cwiseAbs().maxCoeff() > kSymTol) {
      throw MalformedStructure("learning structure: clump sigma asymmetric");
    }
    if (linalg::min_eigenvalue(c.sigma) < -kPsdTol) {
      throw MalformedStructure("learning structure: clump sigma indefinite");
    }
  }
  for (const Vec& x : singlets) {
    if (x.size() != d) {
      throw MalformedStructure("learning structure: inconsistent dimensions");
    }
    if (!finite(x)) {
      throw MalformedStructure("learning structure: non-finite singlet");
    }
  }
}

// ---------------------------------------------------------------------------
// DpmmConfig
// ---------------------------------------------------------------------------

void DpmmConfig::validate(int dim) const {
  if (dim < 1) throw InvalidConfig("dpmm config: dimension must be >= 1");
  if (!(concentration > 0.0)) {
    throw InvalidConfig("dpmm config: concentration must be > 0");
  }
  if (!(prior_scale > 0.0)) {
    throw InvalidConfig("dpmm config: prior_scale must be > 0");
  }
  if (prior_dof >= 0.0 && !(prior_dof > dim - 1)) {
    throw InvalidConfig("dpmm config: prior_dof must exceed dim - 1");
  }
  if (prior_mean && prior_mean->size() != dim) {
    throw InvalidConfig("dpmm config: prior_mean dimension mismatch");
  }
  if (prior_scatter) {
    if (prior_scatter->rows() != dim || prior_scatter->cols() != dim) {
      throw InvalidConfig("dpmm config: prior_scatter dimension mismatch");
    }
    if ((*prior_scatter - prior_scatter->transpose()).cwiseAbs().maxCoeff() >
        kSymTol) {
      throw InvalidConfig("dpmm config: prior_scatter asymmetric");
    }
    if (linalg::min_eigenvalue(*prior_scatter) <= 0.0) {
      throw InvalidConfig("dpmm config: prior_scatter must be positive "
                          "definite");
    }
  }
  if (budget < 1) throw InvalidConfig("dpmm config: budget must be >= 1");
  if (truncation < 1) {
    throw InvalidConfig("dpmm config: truncation must be >= 1");
  }
  if (!(assign_tol >= 0.0 && assign_tol < 1.0)) {
    throw InvalidConfig("dpmm config: assign_tol must lie in [0, 1)");
  }
}

// ---------------------------------------------------------------------------
// update / extract_mixture / merge_select
// ---------------------------------------------------------------------------

LearningStructure update(const LearningStructure& structure,
                         const Vec& observation, const DpmmConfig& cfg,
                         UpdateTrace* trace) {
  if (observation.size() < 1 || !finite(observation)) {
    throw InvalidObservation("dpmm update: observation must be finite");
  }
  structure.validate();
  if (structure.total_count() > 0 &&
      structure.dim() != static_cast<int>(observation.size())) {
    throw InvalidObservation("dpmm update: observation dimension mismatch");
  }
  cfg.validate(static_cast<int>(observation.size()));

  std::vector<Unit> units = units_of(structure);
  units.push_back({observation,
                   Mat::Zero(observation.size(), observation.size()), 1.0, 1,
                   true});
  const Prior pr = resolve_prior(cfg, units[0].mean);
  const std::int64_t total = structure.total_count() + 1;

  Fit fit = fit_units(units, pr, cfg, total);
  std::vector<Cell> cells = cells_from_hard(fit, units);
  if (trace != nullptr) {
    trace->sweep_objective = fit.sweep_objective;
    trace->converged = fit.converged;
    trace->components = static_cast<int>(cells.size());
  }
  cells = refine_cells(std::move(cells), units, fit.comps, cfg.budget);
  return emit_structure(cells, units, structure, &observation);
}

MixtureEstimate extract_mixture(const LearningStructure& structure,
                                const DpmmConfig& cfg) {
  structure.validate();
  const std::int64_t total = structure.total_count();
  if (total < 1) {
    throw EmptyStructure("dpmm extract: structure holds no data");
  }
  cfg.validate(structure.dim());

  const std::vector<Unit> units = units_of(structure);
  const Prior pr = resolve_prior(cfg, units[0].mean);
  const Fit fit = fit_units(units, pr, cfg, total);

  const int k = static_cast<int>(fit.comps.size());
  const int d = pr.d;
  MixtureEstimate est;
  for (int t = 0; t < k; ++t) {
    std::vector<int> ids;
    for (int i = 0; i < static_cast<int>(units.size()); ++i) {
      if (fit.hard[i] == t) ids.push_back(i);
    }
    if (ids.empty()) continue;
    MixtureComponent mc;
    mc.count = 0;
    for (int id : ids) mc.count += units[id].icount;
    mc.weight = static_cast<double>(mc.count) / static_cast<double>(total);
    const CellStats cs = pool(units, ids);
    mc.mean = cs.mean;
    mc.cov = symmetrized(cs.scatter / cs.n) + kCovRidge * Mat::Identity(d, d);
    est.components.push_back(std::move(mc));
  }
  return est;
}

std::optional<std::size_t> merge_select(
    std::int64_t local_count,
    const std::vector<std::int64_t>& remote_counts) {
  std::optional<std::size_t> pick;
  std::int64_t best = local_count;
  for (std::size_t i = 0; i < remote_counts.size(); ++i) {
    if (remote_counts[i] > best) {
      best = remote_counts[i];
      pick = i;
    }
  }
  return pick;
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

std::string to_json(const LearningStructure& structure) {
  nlohmann::json j;
  j["clumps"] = nlohmann::json::array();
  for (const Clump& c : structure.clumps) {
    nlohmann::json jc;
    jc["mu"] = std::vector<double>(c.mean.begin(), c.mean.end());
    jc["n"] = c.count;
    auto rows = nlohmann::json::array();
    for (int r = 0; r < c.sigma.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (int col = 0; col < c.sigma.cols(); ++col) row.push_back(c.sigma(r, col));
      rows.push_back(std::move(row));
    }
    jc["sigma"] = std::move(rows);
    j["clumps"].push_back(std::move(jc));
  }
  j["singlets"] = nlohmann::json::array();
  for (const Vec& x : structure.singlets) {
    j["singlets"].push_back(std::vector<double>(x.begin(), x.end()));
  }
  return j.dump();
}

namespace {

Vec vec_from(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) {
    throw MalformedStructure("learning structure json: expected a non-empty "
                             "numeric array");
  }
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw MalformedStructure("learning structure json: expected a number");
    }
    v(static_cast<int>(i)) = j[i].get<double>();
  }
  return v;
}

}  // namespace

LearningStructure structure_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedStructure(std::string("learning structure json: ") +
                             e.what());
  }
  if (!j.is_object() || !j.contains("clumps") || !j.contains("singlets") ||
      !j["clumps"].is_array() || !j["singlets"].is_array()) {
    throw MalformedStructure("learning structure json: expected an object "
                             "with clumps and singlets arrays");
  }
  LearningStructure s;
  for (const auto& jc : j["clumps"]) {
    if (!jc.is_object() || !jc.contains("mu") || !jc.contains("sigma") ||
        !jc.contains("n") || !jc["n"].is_number_integer()) {
      throw MalformedStructure("learning structure json: malformed clump");
    }
    Clump c;
    c.mean = vec_from(jc["mu"]);
    c.count = jc["n"].get<std::int64_t>();
    const auto& rows = jc["sigma"];
    if (!rows.is_array() || rows.size() != static_cast<std::size_t>(c.mean.size())) {
      throw MalformedStructure("learning structure json: malformed sigma");
    }
    c.sigma = Mat(c.mean.size(), c.mean.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Vec row = vec_from(rows[r]);
      if (row.size() != c.mean.size()) {
        throw MalformedStructure("learning structure json: malformed sigma");
      }
      c.sigma.row(static_cast<int>(r)) = row.transpose();
    }
    s.clumps.push_back(std::move(c));
  }
  for (const auto& jx : j["singlets"]) s.singlets.push_back(vec_from(jx));
  s.validate();
  return s;
}

}  // namespace cooldrmc::dpmm
