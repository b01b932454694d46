// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_AMBIGUITY_HPP_
#define COOLDRMC_AMBIGUITY_HPP_

#include <optional>
#include <vector>

#include "cooldrmc/geometry.hpp"
#include "cooldrmc/linalg.hpp"
#include "cooldrmc/mixture.hpp"

namespace cooldrmc::ambiguity {

class InsufficientData : public Error {
public:
  using Error::Error;
};
class TooManyCompositions : public Error {
public:
  using Error::Error;
};
class NotPsd : public Error {
public:
  using Error::Error;
};
class InvalidRadius : public Error {
public:
  using Error::Error;
};
class InvalidGrouping : public Error {
public:
  using Error::Error;
};
class EmptyEstimate : public Error {
public:
  using Error::Error;
};

/// Second-moment bound representation of a basic set.
enum class MomentForm {
  /// Bound is eps * cov.
  Scaled,
  /// Bound is the explicit matrix second_moment (compressed sets).
  Explicit,
};

/// How a component's (beta, eps) pair was obtained.
enum class ParamSource {
  /// Finite-sample formulas with their sample-size condition satisfied.
  FiniteSample,
  /// Gaussian-concentration surrogate (documented fallback for sample
  /// counts below the finite-sample threshold; keeps the set proportional
  /// to the learned covariance).
  Concentration,
  /// Support-covering parameterization (last-resort fallback).
  SupportCover,
};

/**
 * @brief Moment ambiguity set for one mixture mode.
 *
 * Describes all distributions on the support set whose mean lies in
 * { mu : (mu - mean)' cov^{-1} (mu - mean) <= beta } and whose second
 * moment about `mean` is bounded by eps * cov (Scaled) or by the matrix
 * second_moment (Explicit).
 */
struct BasicAmbiguitySet {
  geometry::ConvexBody support;
  Vec mean;
  Mat cov;
  double beta = 0.0;
  MomentForm form = MomentForm::Scaled;
  double eps = 0.0;
  Mat second_moment;
  ParamSource source = ParamSource::FiniteSample;
};

/**
 * @brief Mixture ambiguity set: weighted combinations of the component
 * sets with mixture weights inside a total-variation ball around weights.
 */
struct MixtureAmbiguitySet {
  Vec weights;
  double tv_radius = 0.0;
  std::vector<BasicAmbiguitySet> components;

  int dim() const;
  /// Throws Error when weights leave the simplex (1e-9), the radius
  /// leaves [0, 2], or the set is empty.
  void validate() const;
};

/// Confidence split used when building sets.
struct ConfidenceConfig {
  /// Mixture-weight confidence.
  double chi = 0.95;
  /// Per-component moment confidence.
  double alpha_comp = 0.95;
  /// CVaR level of the downstream robust constraint.
  double alpha_cvar = 0.95;
};

/// Integer exponents of one k-step mode combination (sum = k).
struct Composition {
  std::vector<int> exponents;
};

/**
 * @brief Total-variation radius for the mixture weights.
 *
 * theta = 2 sqrt((m ln2 - ln(1-chi)) / (2 (total_n - 1))), clamped to
 * [0, 2]. Throws InsufficientData when total_n < 2.
 */
double finite_sample_theta(int m, double chi, long total_n);

struct BetaEps {
  double beta = 0.0;
  double eps = 0.0;
};

/**
 * @brief Finite-sample moment bounds for one component.
 *
 * Evaluates the whitened-radius bounds at sample count n; returns nullopt
 * when n fails the sample-size condition or a denominator is nonpositive.
 * dim enters one interior square-root term.
 */
std::optional<BetaEps> finite_sample_beta_eps(long n, double r_hat,
                                              double alpha_comp, int dim = 2);

/**
 * @brief Whitened support radius sup over the support of
 * |cov^{-1/2} (w - mean)|.
 *
 * Exact for boxes (corner enumeration) and 2D polytopes (vertex
 * enumeration); conservative for balls.
 */
double whitened_support_radius(const geometry::ConvexBody& support,
                               const Vec& mean, const Mat& cov);

/**
 * @brief Builds the time-t mixture ambiguity set from a learned estimate.
 *
 * One basic set per component with (beta, eps) from the finite-sample
 * formulas; components whose counts fall below the sample-size condition
 * get the concentration surrogate, and the support-covering
 * parameterization when even that is unavailable. Each component records
 * its ParamSource. Throws EmptyEstimate when est has no components.
 */
MixtureAmbiguitySet build_ambiguity(const MixtureEstimate& est,
                                    const geometry::ConvexBody& support,
                                    const ConfidenceConfig& cfg);

/**
 * @brief All non-negative integer m-tuples summing to k, lexicographic.
 *
 * Throws TooManyCompositions when the count exceeds 1e6.
 */
std::vector<Composition> enumerate_compositions(int m, int k);

/**
 * @brief k-step propagation of a one-step mixture set.
 *
 * Component j (one per composition) carries the multinomial weight, mean
 * phi + sum k_i mu_i, covariance sum k_i cov_i, beta_j = sum k_i beta_i,
 * eps_j = beta_j + max_i (eps_i - beta_i); the radius grows to
 * k theta (1+2 theta)^{k-1}; support_k is supplied by the caller.
 */
MixtureAmbiguitySet propagate(const MixtureAmbiguitySet& base, const Vec& phi,
                              int k, const geometry::ConvexBody& support_k);

/**
 * @brief Squared 2-Wasserstein distance between Gaussian parameters.
 *
 * |mu1-mu2|^2 + tr(S1) + tr(S2) - 2 tr((S1^(1/2) S2 S1^(1/2))^(1/2)).
 * Throws NotPsd for non-PSD covariance inputs.
 */
double gaussian_w2_squared(const Vec& mu1, const Mat& s1, const Vec& mu2,
                           const Mat& s2);

/**
 * @brief Groups component indices into at most max_groups clusters.
 *
 * k-medoids on pairwise gaussian_w2_squared with 20 seeded restarts;
 * identity grouping when the set count does not exceed max_groups.
 */
std::vector<std::vector<int>> cluster_components(
    const std::vector<BasicAmbiguitySet>& sets, int max_groups,
    std::uint64_t seed);

/// Worst-case weight ratio bounds of one group over the TV ball.
struct RatioBounds {
  /// Max over members of the worst-case member-to-group weight ratio.
  double gamma_bar = 1.0;
  /// Per-member worst-case deviation of the ratio from nominal.
  Vec gamma_breve;
};

/**
 * @brief Exact worst-case weight ratios over the TV ball via small LPs.
 *
 * Throws InvalidRadius when tv_radius < 0.
 */
RatioBounds weight_ratio_bounds(const Vec& weights, double tv_radius,
                                const std::vector<int>& group);

/**
 * @brief Safe compression: merges grouped components into one set per
 * group in explicit second-moment form.
 *
 * Throws InvalidGrouping unless grouping partitions the component indices.
 */
MixtureAmbiguitySet compress(const MixtureAmbiguitySet& set,
                             const std::vector<std::vector<int>>& grouping);

// --- membership oracles (used by tests and diagnostics) ---

/// Mean-ellipsoid and second-moment check of (mu, cov) against one set.
bool moments_member(const BasicAmbiguitySet& set, const Vec& mu,
                    const Mat& cov, double tol = 1e-9);

/// Full mixture membership: component moments plus TV weight check.
bool mixture_member(const MixtureAmbiguitySet& set, const Vec& weights,
                    const std::vector<Vec>& means,
                    const std::vector<Mat>& covs, double tol = 1e-9);

}  // namespace cooldrmc::ambiguity

#endif  // COOLDRMC_AMBIGUITY_HPP_
