// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_DPMM_HPP_
#define COOLDRMC_DPMM_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cooldrmc/linalg.hpp"

namespace cooldrmc::dpmm {

class InvalidObservation : public Error {
public:
  using Error::Error;
};
class EmptyStructure : public Error {
public:
  using Error::Error;
};
class InvalidConfig : public Error {
public:
  using Error::Error;
};
class MalformedStructure : public Error {
public:
  using Error::Error;
};

/**
 * @brief Summary of a group of observations by sufficient statistics.
 *
 * `sigma` is the covariance of the summarized points about `mean` (second
 * central moment, 1/N normalization), so a single-point clump has sigma = 0.
 * Together with the count this is enough to rebuild the group's contribution
 * to any Gaussian-family posterior exactly.
 */
struct Clump {
  /// Mean of the summarized points.
  Vec mean;
  /// Covariance of the summarized points (symmetric, PSD up to 1e-9).
  Mat sigma;
  /// Number of original data points summarized (>= 1).
  std::int64_t count = 0;
};

/**
 * @brief Memory-bounded record of everything learned from a data stream.
 *
 * Holds clumps (summarized groups) and singlets (raw points not yet
 * summarized). This is the unit of exchange between robots: it carries all
 * state the inference needs, and it serializes exactly (see to_json).
 */
struct LearningStructure {
  std::vector<Clump> clumps;
  std::vector<Vec> singlets;

  /// Total number of observations represented: sum of clump counts plus
  /// the number of singlets.
  std::int64_t total_count() const;
  /// Ambient dimension, or 0 when the structure is empty.
  int dim() const;
  /// Throws MalformedStructure when a clump count is < 1, a matrix is
  /// asymmetric beyond 1e-9 or indefinite beyond -1e-9, an entry is not
  /// finite, or dimensions disagree.
  void validate() const;
};

/**
 * @brief Inference configuration: mixing prior, base measure, and memory.
 *
 * The base measure is a Normal-inverse-Wishart prior over component mean
 * and covariance. Unset optional fields resolve at fit time: prior_mean to
 * the first retained summary's mean (the first observation on the first
 * update), prior_dof to d + 2, and prior_scatter to 0.01 * I.
 */
struct DpmmConfig {
  /// Concentration of the mixing prior (> 0).
  double concentration = 1.0;
  /// Base-measure mean m0; unset -> first retained summary's mean.
  std::optional<Vec> prior_mean;
  /// Base-measure mean-precision scale kappa0 (> 0).
  double prior_scale = 0.01;
  /// Base-measure degrees of freedom nu0 (> d - 1); negative -> d + 2.
  double prior_dof = -1.0;
  /// Base-measure scale matrix Psi0 (SPD); unset -> 0.01 * I.
  std::optional<Mat> prior_scatter;
  /// Memory budget: max clumps + singlets retained after an update.
  int budget = 64;
  /// Stick-breaking truncation: max mixture components considered.
  int truncation = 20;
  /// Responsibilities below this are zeroed and the rest renormalized.
  double assign_tol = 1e-15;
  /// Seed for the deterministic fit initialization.
  std::uint64_t seed = 0;

  /// Throws InvalidConfig when a field leaves its documented range for
  /// data of the given dimension.
  void validate(int dim) const;
};

/// One extracted mixture mode.
struct MixtureComponent {
  /// Share of the data assigned to this mode: count / total_count.
  double weight = 0.0;
  /// Number of observations assigned to this mode.
  std::int64_t count = 0;
  /// Empirical mean of the assigned data.
  Vec mean;
  /// Empirical covariance (1/N normalization) plus a 1e-6 * I ridge.
  Mat cov;
};

/// Mixture read-out of a learning structure.
struct MixtureEstimate {
  std::vector<MixtureComponent> components;
};

/// Diagnostics of one update's model-building phase.
struct UpdateTrace {
  /// Variational objective after each coordinate-ascent sweep of the
  /// selected fit; non-decreasing up to floating-point noise.
  std::vector<double> sweep_objective;
  /// True when the sweep loop met its relative-improvement stop.
  bool converged = false;
  /// Number of mixture components holding at least one summary.
  int components = 0;
};

/**
 * @brief Absorbs one observation into the structure.
 *
 * Model-building phase: fits a truncated stick-breaking mixture with
 * Gaussian components to the structure's summaries plus the new
 * observation by coordinate ascent on the variational objective, with
 * each summary assigned as a block. Ascent stops when the relative
 * improvement drops below 1e-6 or after 200 sweeps; several seeded
 * initializations are run and the best final objective wins.
 * Compression phase: summaries are hard-assigned to their best component,
 * and the resulting partition cells are split greedily by the change in
 * the clump-level objective while the cell count stays within the budget;
 * each final cell becomes one clump (or stays a singlet when it holds a
 * single raw point). The result's total_count is the input's plus one.
 *
 * Pure function of (structure, observation, cfg): identical inputs give
 * bitwise-identical results.
 *
 * Throws InvalidObservation when the observation has a non-finite entry
 * or its dimension disagrees with a non-empty structure.
 */
LearningStructure update(const LearningStructure& structure,
                         const Vec& observation, const DpmmConfig& cfg,
                         UpdateTrace* trace = nullptr);

/**
 * @brief Reads the mixture estimate off a structure.
 *
 * Runs the same model-building fit as update (without adding data),
 * assigns each clump and singlet to its maximum-responsibility component,
 * and reports per component the assigned count N, the weight
 * N / total_count, and the empirical moments pooled from the assigned
 * summaries' sufficient statistics (mean as the count-weighted average,
 * covariance with 1/N normalization plus a 1e-6 * I ridge). Components
 * holding no summary are dropped; the rest keep fit order.
 *
 * Throws EmptyStructure when the structure holds no data.
 */
MixtureEstimate extract_mixture(const LearningStructure& structure,
                                const DpmmConfig& cfg);

/**
 * @brief Picks which peer's learning structure to adopt.
 *
 * Returns the index of the strictly largest remote data count exceeding
 * the local one (smallest index on ties), or nullopt when the local
 * count is already maximal.
 */
std::optional<std::size_t> merge_select(
    std::int64_t local_count, const std::vector<std::int64_t>& remote_counts);

/**
 * @brief Canonical wire form {clumps:[{mu,sigma,n}], singlets:[[..]]}.
 *
 * Numbers serialize with shortest round-trip precision, so
 * structure_from_json(to_json(s)) reproduces s bitwise.
 */
std::string to_json(const LearningStructure& structure);

/// Parses the wire form; throws MalformedStructure on bad JSON, missing
/// fields, wrong shapes, or invariant violations.
LearningStructure structure_from_json(const std::string& text);

}  // namespace cooldrmc::dpmm

#endif  // COOLDRMC_DPMM_HPP_
