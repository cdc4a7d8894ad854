#pragma once

#include "opelab/harness.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace opelab {

/// Flat `key = value` experiment configuration. `#` starts a comment, list
/// values are comma separated, unknown or repeated keys are errors.
///
/// Keys: experiment, environment, sweep_param, sweep_values, estimators,
/// n_seeds, n_validation_seeds, n_logged, ridge_lambda, seed,
/// tau_constraint, tau_grid_{tree,knn,ball,kernel}, tree_depth,
/// include_identity, renormalize_kernel, n_actions, n_topics, d_context,
/// d_embed, d_noise, hidden_width, noise_draws, n_test, beta, epsilon,
/// deficient_fraction, movielens_data, rank, eps_floor.
SweepSpec parse_sweep_config(std::istream& in);
SweepSpec load_sweep_config(const std::filesystem::path& path);

/// Keys accepted by parse_sweep_config, in documentation order.
const std::vector<std::string>& config_keys();

}  // namespace opelab
