#include "opelab/core.hpp"

#include "opelab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace opelab {

EmbeddingTable::EmbeddingTable(RowMatrix rows) : rows_(std::move(rows)) {
    if (!rows_.allFinite()) throw ArgumentError("embedding table has non-finite entries");
}

double EmbeddingTable::squared_distance(std::size_t a, std::size_t b) const {
    return (row(a) - row(b)).squaredNorm();
}

Vector PolicyEvaluator::prob_row_from_rewards(const Vector&, const Context& context) const {
    return prob_row(context);
}

Vector RewardOracle::reward_row(const Context& context) const {
    Vector out(static_cast<Eigen::Index>(n_actions()));
    for (std::size_t a = 0; a < n_actions(); ++a) out[static_cast<Eigen::Index>(a)] = expected_reward(a, context);
    return out;
}

PolicyTable tabulate(const PolicyEvaluator& policy, std::span<const Context> contexts) {
    const PolicyEvaluator* one[] = {&policy};
    return std::move(tabulate(one, contexts).front());
}

std::vector<PolicyTable> tabulate(std::span<const PolicyEvaluator* const> policies,
                                  std::span<const Context> contexts) {
    std::vector<RowMatrix> rows;
    rows.reserve(policies.size());
    for (const auto* p : policies) {
        rows.emplace_back(static_cast<Eigen::Index>(contexts.size()),
                          static_cast<Eigen::Index>(p->n_actions()));
    }

    // group policies by driving oracle so each oracle row is computed once
    std::vector<const RewardOracle*> oracles;
    for (const auto* p : policies) {
        const RewardOracle* o = p->driving_oracle();
        if (o != nullptr && std::find(oracles.begin(), oracles.end(), o) == oracles.end()) {
            oracles.push_back(o);
        }
    }

    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const auto row_index = static_cast<Eigen::Index>(i);
        for (const RewardOracle* o : oracles) {
            const Vector rewards = o->reward_row(contexts[i]);
            for (std::size_t k = 0; k < policies.size(); ++k) {
                if (policies[k]->driving_oracle() == o) {
                    rows[k].row(row_index) = policies[k]->prob_row_from_rewards(rewards, contexts[i]).transpose();
                }
            }
        }
        for (std::size_t k = 0; k < policies.size(); ++k) {
            if (policies[k]->driving_oracle() == nullptr) {
                rows[k].row(row_index) = policies[k]->prob_row(contexts[i]).transpose();
            }
        }
    }

    std::vector<PolicyTable> out;
    out.reserve(rows.size());
    for (auto& r : rows) out.emplace_back(std::move(r));
    return out;
}

void check_probability_row(std::span<const double> row, double tolerance) {
    double total = 0.0;
    for (double p : row) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw DataIntegrityError("probability row has a negative or non-finite entry");
        total += p;
    }
    if (std::abs(total - 1.0) > tolerance) {
        throw DataIntegrityError("probability row sums to " + std::to_string(total));
    }
}

BanditDataset::BanditDataset(std::vector<LoggedInteraction> interactions,
                             std::shared_ptr<const PolicyEvaluator> logging,
                             std::shared_ptr<const EmbeddingTable> embeddings, DatasetMeta meta)
    : interactions_(std::move(interactions)),
      logging_(std::move(logging)),
      embeddings_(std::move(embeddings)),
      meta_(std::move(meta)) {
    if (!logging_ || !embeddings_) throw ArgumentError("dataset requires a logging policy and embeddings");
    logging_rows_ = tabulate(*logging_, contexts());
    validate();
}

BanditDataset::BanditDataset(std::vector<LoggedInteraction> interactions,
                             std::shared_ptr<const PolicyEvaluator> logging,
                             std::shared_ptr<const EmbeddingTable> embeddings, PolicyTable logging_rows,
                             DatasetMeta meta)
    : interactions_(std::move(interactions)),
      logging_(std::move(logging)),
      embeddings_(std::move(embeddings)),
      logging_rows_(std::move(logging_rows)),
      meta_(std::move(meta)) {
    if (!logging_ || !embeddings_) throw ArgumentError("dataset requires a logging policy and embeddings");
    validate();
}

void BanditDataset::validate() {
    const std::size_t n_act = embeddings_->n_actions();
    if (logging_->n_actions() != n_act) {
        throw ArgumentError("logging policy action count " + std::to_string(logging_->n_actions()) +
                            " does not match embeddings row count " + std::to_string(n_act));
    }
    if (logging_rows_.size() != interactions_.size() || (!interactions_.empty() && logging_rows_.n_actions() != n_act)) {
        throw ArgumentError("logging rows do not match the interactions");
    }
    propensities_.resize(interactions_.size());
    for (std::size_t i = 0; i < interactions_.size(); ++i) {
        const auto& it = interactions_[i];
        if (it.action >= n_act) {
            throw ArgumentError("interaction " + std::to_string(i) + " has action " + std::to_string(it.action) +
                                " outside [0, " + std::to_string(n_act) + ")");
        }
        if (!std::isfinite(it.reward)) throw DataIntegrityError("interaction " + std::to_string(i) + " has a non-finite reward");
        const double p = logging_rows_.at(i, it.action);
        if (!(p > 0.0)) {
            throw DataIntegrityError("interaction " + std::to_string(i) +
                                     " has zero logging propensity for its logged action");
        }
        propensities_[i] = p;
    }
}

std::vector<Context> BanditDataset::contexts() const {
    std::vector<Context> out;
    out.reserve(interactions_.size());
    for (const auto& it : interactions_) out.push_back(it.context);
    return out;
}

double logged_propensity(const BanditDataset& dataset, std::size_t index) {
    if (index >= dataset.size()) {
        throw ArgumentError("interaction index " + std::to_string(index) + " out of range");
    }
    return dataset.propensities()[index];
}

double true_value(const PolicyEvaluator& policy, const RewardOracle& oracle, std::span<const Context> contexts) {
    if (contexts.empty()) throw ArgumentError("true_value needs at least one test context");
    if (policy.n_actions() != oracle.n_actions()) throw ArgumentError("policy and oracle disagree on the action count");

    const bool shared = policy.driving_oracle() == &oracle;
    double total = 0.0;
    for (const auto& x : contexts) {
        const Vector rewards = oracle.reward_row(x);
        const Vector probs = shared ? policy.prob_row_from_rewards(rewards, x) : policy.prob_row(x);
        total += probs.dot(rewards);
    }
    return total / static_cast<double>(contexts.size());
}

}  // namespace opelab
