// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_MIXTURE_HPP_
#define COOLDRMC_MIXTURE_HPP_

#include <vector>

#include "cooldrmc/linalg.hpp"

namespace cooldrmc {

/// One mixture mode with its effective observation count.
struct MixtureComponent {
  double weight = 0.0;
  Vec mean;
  Mat cov;
  long count = 0;
};

/// Moment summary of a learned motion mixture.
struct MixtureEstimate {
  std::vector<MixtureComponent> components;
  long total_count = 0;
};

}  // namespace cooldrmc

#endif  // COOLDRMC_MIXTURE_HPP_
