// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psage/error.hpp"
#include "psage/matrix.hpp"
#include "psage/rng.hpp"

namespace psage {

/// Scalar objective over a set of parameters. When called with
/// `accumulate_grads == true` it must also run the backward pass, adding
/// d(loss)/d(theta) into each Parameter::grad.
using Objective = std::function<double(bool accumulate_grads)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference check on a random subsample of coordinates (all of them
/// when fewer than `min_coords` exist). Relative error is
/// |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckResult grad_check(const Objective& objective, std::span<Parameter* const> params,
                                  double eps = 1e-5, std::size_t min_coords = 200,
                                  std::uint64_t seed = 0) {
  require(eps > 0.0, ErrorKind::invalid_input, "finite-difference step must be positive");
  for (Parameter* p : params) p->zero_grad();
  const double base = objective(true);
  const double again = objective(false);
  require(base == again, ErrorKind::contract,
          "objective is not deterministic (two forward passes differ)");

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t k = 0; k < params[p]->size(); ++k) coords.emplace_back(p, k);
  if (coords.size() > min_coords) {
    Rng rng(seed);
    for (std::size_t i = 0; i < min_coords; ++i) std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(min_coords);
  }

  GradCheckResult result;
  for (const auto& [p, k] : coords) {
    double& theta = params[p]->value.data()[k];
    const double saved = theta;
    theta = saved + eps;
    const double plus = objective(false);
    theta = saved - eps;
    const double minus = objective(false);
    theta = saved;

    const double numeric = (plus - minus) / (2.0 * eps);
    const double analytic = params[p]->grad.data()[k];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    ++result.coords_checked;
    if (rel > result.max_rel_error || !std::isfinite(rel)) {
      result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
      result.worst_parameter = params[p]->name;
      result.worst_index = k;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace psage
