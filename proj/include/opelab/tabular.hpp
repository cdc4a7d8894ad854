#pragma once

#include "opelab/core.hpp"

#include <cstddef>

namespace opelab {

/// Policy given as an explicit table, one row per context id.
class TabularPolicy final : public PolicyEvaluator {
public:
    explicit TabularPolicy(RowMatrix probs);

    std::size_t n_actions() const override { return static_cast<std::size_t>(probs_.cols()); }
    Vector prob_row(const Context& context) const override;
    const RowMatrix& table() const { return probs_; }

private:
    RowMatrix probs_;
};

/// delta(a, x) given as an explicit table, one row per context id.
class TabularRewardOracle final : public RewardOracle {
public:
    explicit TabularRewardOracle(RowMatrix rewards);

    std::size_t n_actions() const override { return static_cast<std::size_t>(rewards_.cols()); }
    double expected_reward(std::size_t action, const Context& context) const override;
    Vector reward_row(const Context& context) const override;
    const RowMatrix& table() const { return rewards_; }

private:
    RowMatrix rewards_;
};

class UniformPolicy final : public PolicyEvaluator {
public:
    explicit UniformPolicy(std::size_t n_actions);

    std::size_t n_actions() const override { return n_; }
    Vector prob_row(const Context&) const override;

private:
    std::size_t n_;
};

/// Context for row `id` of a tabular instance; features are the one-hot of `id`.
Context tabular_context(std::size_t id, std::size_t n_contexts);

}  // namespace opelab
