#include "opelab/tabular.hpp"

#include "opelab/errors.hpp"

#include <string>

namespace opelab {

namespace {

Eigen::Index checked_row(const Context& context, Eigen::Index rows) {
    if (context.id < 0 || context.id >= rows) {
        throw ArgumentError("context id " + std::to_string(context.id) + " is not a row of the table");
    }
    return static_cast<Eigen::Index>(context.id);
}

}  // namespace

TabularPolicy::TabularPolicy(RowMatrix probs) : probs_(std::move(probs)) {
    for (Eigen::Index i = 0; i < probs_.rows(); ++i) {
        check_probability_row({probs_.data() + i * probs_.cols(), static_cast<std::size_t>(probs_.cols())});
    }
}

Vector TabularPolicy::prob_row(const Context& context) const {
    return probs_.row(checked_row(context, probs_.rows())).transpose();
}

TabularRewardOracle::TabularRewardOracle(RowMatrix rewards) : rewards_(std::move(rewards)) {
    if (!rewards_.allFinite()) throw ArgumentError("reward table has non-finite entries");
}

double TabularRewardOracle::expected_reward(std::size_t action, const Context& context) const {
    return rewards_(checked_row(context, rewards_.rows()), static_cast<Eigen::Index>(action));
}

Vector TabularRewardOracle::reward_row(const Context& context) const {
    return rewards_.row(checked_row(context, rewards_.rows())).transpose();
}

UniformPolicy::UniformPolicy(std::size_t n_actions) : n_(n_actions) {
    if (n_ == 0) throw ArgumentError("uniform policy needs at least one action");
}

Vector UniformPolicy::prob_row(const Context&) const {
    return Vector::Constant(static_cast<Eigen::Index>(n_), 1.0 / static_cast<double>(n_));
}

Context tabular_context(std::size_t id, std::size_t n_contexts) {
    Context c;
    c.features = Vector::Zero(static_cast<Eigen::Index>(n_contexts));
    c.features[static_cast<Eigen::Index>(id)] = 1.0;
    c.id = static_cast<std::int64_t>(id);
    return c;
}

}  // namespace opelab
