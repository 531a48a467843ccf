#pragma once

#include <Eigen/Core>

namespace metagrad {

using Vec = Eigen::ArrayXd;

inline bool all_finite(const Vec& v) { return v.isFinite().all(); }

}  // namespace metagrad
