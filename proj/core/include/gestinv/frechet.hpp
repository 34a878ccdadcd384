#pragma once

#include "gestinv/motion.hpp"

namespace gestinv {

// Frechet distance between Gaussian fits of the per-frame flattened poses of
// two motions:
//   |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
// A raw-feature statistic for comparing motions; it is not a learned-feature
// gesture distance. Requires at least two frames in each motion.
double stat_frechet(const MotionSequence& a, const MotionSequence& b);

}  // namespace gestinv
