// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_DRCVAR_HPP_
#define COOLDRMC_DRCVAR_HPP_

#include <utility>
#include <vector>

#include "cooldrmc/ambiguity.hpp"
#include "cooldrmc/conic.hpp"
#include "cooldrmc/geometry.hpp"
#include "cooldrmc/linalg.hpp"

namespace cooldrmc::drcvar {

/// Raised when an ambiguity set, direction, or obstacle cannot be stitched
/// into a worst-case CVaR bias program (shape or dimension mismatch).
class MalformedSet : public Error {
public:
  using Error::Error;
};

/**
 * @brief Index map for the worst-case CVaR bias program.
 *
 * The decision vector starts with four global scalars: the hyperplane bias
 * g (the objective), the CVaR epigraph level z, the mixture-weight dual
 * scalar vartheta, and the total-variation dual zeta. They are followed by
 * one contiguous slab per mixture component holding
 *   - the mean-ellipsoid multiplier matrix (upper triangle), its coupling
 *     vector, and its scalar,
 *   - the second-moment multiplier matrix (upper triangle),
 *   - one nonnegative dual per support face for the excess-loss bound and
 *     one per face for the zero bound,
 *   - the two weight-split scalars and the shared pointwise-bound offset.
 */
struct BiasLayout {
  int dim = 0;             ///< Ambient dimension d.
  std::vector<int> rows;   ///< Support-face count per component.
  std::vector<int> start;  ///< First decision index of each component slab.
  int num_vars = 0;        ///< Total decision-variable count.

  int components() const { return static_cast<int>(rows.size()); }
  /// Entries in one symmetric upper triangle.
  int sym() const { return dim * (dim + 1) / 2; }
  /// Slab width of component n.
  int slab(int n) const { return 2 * sym() + dim + 1 + 2 * rows[n] + 3; }

  int g() const { return 0; }
  int z() const { return 1; }
  int vartheta() const { return 2; }
  int zeta() const { return 3; }

  /// Upper-triangle entry (a, b), a <= b, of the mean-ellipsoid multiplier.
  int mean_mat(int n, int a, int b) const { return start[n] + tri(a, b); }
  /// Coupling vector of the mean-ellipsoid block.
  int mean_vec(int n, int a) const { return start[n] + sym() + a; }
  /// Scalar corner of the mean-ellipsoid block.
  int mean_scalar(int n) const { return start[n] + sym() + dim; }
  /// Upper-triangle entry (a, b) of the second-moment multiplier.
  int quad(int n, int a, int b) const {
    return start[n] + sym() + dim + 1 + tri(a, b);
  }
  /// Face dual j of the excess-loss pointwise bound.
  int face_excess(int n, int j) const {
    return start[n] + 2 * sym() + dim + 1 + j;
  }
  /// Face dual j of the zero pointwise bound.
  int face_zero(int n, int j) const {
    return start[n] + 2 * sym() + dim + 1 + rows[n] + j;
  }
  /// Positive part of the per-component weight dual.
  int weight_pos(int n) const {
    return start[n] + 2 * sym() + dim + 1 + 2 * rows[n];
  }
  /// Negative part of the per-component weight dual.
  int weight_neg(int n) const { return weight_pos(n) + 1; }
  /// Offset shared by the two pointwise bounds.
  int slack(int n) const { return weight_pos(n) + 2; }

private:
  int tri(int a, int b) const {
    if (a > b) std::swap(a, b);
    return a * dim - a * (a + 1) / 2 + b;
  }
};

/**
 * @brief Rewrites a support body as polytope face rows { x : E x <= f }.
 *
 * Boxes expand to their 2d axis rows; polytopes pass through unchanged.
 * Balls have no exact face representation and raise MalformedSet.
 */
geometry::Polytope face_rows(const geometry::ConvexBody& body);

/// Computes the decision-vector layout for a mixture ambiguity set.
BiasLayout bias_layout(const ambiguity::MixtureAmbiguitySet& set);

/**
 * @brief Assembles the worst-case CVaR bias program for one hyperplane.
 *
 * The program minimizes the bias g of the hyperplane { x : h.x + g = 0 }
 * subject to: for every mixture distribution admitted by the ambiguity set,
 * the CVaR at level alpha_u of the signed clearance
 *
 *     -phi.h + S_obstacle(-h) - g
 *
 * of the obstacle anchored at phi stays nonpositive. The emitted program
 * has one epigraph row scaled by 1/(1-alpha_u), one weight-dual equality
 * per component, one moment-dual row per component, and per component four
 * PSD blocks: the excess-loss bound, the zero bound (both (d+1)x(d+1) with
 * support-face terms), the (d+1)x(d+1) mean-ellipsoid multiplier block,
 * and the d x d second-moment multiplier block. Component covariances get
 * a 1e-6 ridge so the mean-ellipsoid dual stays well posed when an
 * estimate degenerates, and a strictly feasible interior point is attached
 * so the solver can skip its feasibility phase.
 *
 * Components in scaled form contribute eps * cov as their second-moment
 * bound; explicit-form components contribute their stored matrix.
 *
 * Throws MalformedSet when dimensions disagree, the direction is not unit
 * length, alpha_u leaves (0, 1), or a support is not polyhedral.
 */
conic::ConicProgram assemble_drcvar_sdp(
    const ambiguity::MixtureAmbiguitySet& set, const Vec& h,
    const geometry::ConvexBody& obstacle, double alpha_u);

/**
 * @brief Assembles and solves the bias program.
 *
 * Returns the certified minimal bias and the solve report. The bias is NaN
 * unless the report status is Optimal; callers fall back on their own
 * policy in that case rather than receiving an exception.
 */
std::pair<double, conic::SolveReport> min_bias(
    const ambiguity::MixtureAmbiguitySet& set, const Vec& h,
    const geometry::ConvexBody& obstacle, double alpha_u, double tol = 1e-8);

}  // namespace cooldrmc::drcvar

#endif  // COOLDRMC_DRCVAR_HPP_
