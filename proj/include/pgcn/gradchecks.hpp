#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pgcn/tensor.hpp"

namespace pgcn {

// Named finite-difference checks covering every differentiable operation plus
// the full model loss on a two-sample batch (run with a reduced structural
// size to keep the runtime small). which = "all" or one check name; seed
// controls parameter initialization and the probed coordinates.
std::vector<std::pair<std::string, GradCheckResult>> run_gradchecks(const std::string& which,
                                                                    std::uint64_t seed);

std::vector<std::string> gradcheck_names();

inline constexpr double kGradCheckEps = 1e-6;
inline constexpr double kGradCheckTol = 1e-4;

}  // namespace pgcn
