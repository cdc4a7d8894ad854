#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace opelab {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A context: dense features plus, for contexts drawn from a finite
/// population (Movielens users, tabular instances), the population row.
struct Context {
    Vector features;
    std::int64_t id = -1;
};

struct LoggedInteraction {
    Context context;
    std::size_t action = 0;
    double reward = 0.0;
};

/// Action embeddings, one row per action.
class EmbeddingTable {
public:
    explicit EmbeddingTable(RowMatrix rows);

    std::size_t n_actions() const { return static_cast<std::size_t>(rows_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(rows_.cols()); }
    auto row(std::size_t action) const { return rows_.row(static_cast<Eigen::Index>(action)); }
    const RowMatrix& matrix() const { return rows_; }

    double squared_distance(std::size_t a, std::size_t b) const;

private:
    RowMatrix rows_;
};

class RewardOracle;

/// Anything that yields a full probability row over actions for a context.
///
/// Policies whose row is a deterministic function of an oracle's reward row
/// (softmax, epsilon-greedy, the two-stage recommender policy) report that
/// oracle through `driving_oracle()`; callers that tabulate several such
/// policies on the same contexts then evaluate the oracle once per context.
class PolicyEvaluator {
public:
    virtual ~PolicyEvaluator() = default;

    virtual std::size_t n_actions() const = 0;
    virtual Vector prob_row(const Context& context) const = 0;

    virtual const RewardOracle* driving_oracle() const { return nullptr; }
    /// Only meaningful when `driving_oracle()` is non-null; `rewards` is that
    /// oracle's reward row at `context`.
    virtual Vector prob_row_from_rewards(const Vector& rewards, const Context& context) const;
};

/// Expected reward delta(a, x). Deterministic and finite.
class RewardOracle {
public:
    virtual ~RewardOracle() = default;

    virtual std::size_t n_actions() const = 0;
    virtual double expected_reward(std::size_t action, const Context& context) const = 0;
    virtual Vector reward_row(const Context& context) const;
};

/// Rows of one policy evaluated at a fixed list of contexts.
class PolicyTable {
public:
    PolicyTable() = default;
    explicit PolicyTable(RowMatrix rows) : rows_(std::move(rows)) {}

    std::size_t size() const { return static_cast<std::size_t>(rows_.rows()); }
    std::size_t n_actions() const { return static_cast<std::size_t>(rows_.cols()); }
    double at(std::size_t i, std::size_t action) const {
        return rows_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(action));
    }
    std::span<const double> row(std::size_t i) const {
        return {rows_.data() + i * n_actions(), n_actions()};
    }
    const RowMatrix& matrix() const { return rows_; }

private:
    RowMatrix rows_;
};

PolicyTable tabulate(const PolicyEvaluator& policy, std::span<const Context> contexts);

/// Tabulate several policies over the same contexts, computing each driving
/// oracle's reward row once per context.
std::vector<PolicyTable> tabulate(std::span<const PolicyEvaluator* const> policies,
                                  std::span<const Context> contexts);

/// Throws DataIntegrityError unless `row` is a probability vector (entries
/// >= 0, sum 1 within `tolerance`).
void check_probability_row(std::span<const double> row, double tolerance = 1e-9);

struct DatasetMeta {
    std::string environment;
    std::uint64_t seed = 0;
};

/// Logged bandit feedback with its known logging policy. The logging row of
/// every interaction is tabulated at construction; a zero logged propensity
/// is rejected since the action could not have been sampled.
class BanditDataset {
public:
    BanditDataset(std::vector<LoggedInteraction> interactions,
                  std::shared_ptr<const PolicyEvaluator> logging,
                  std::shared_ptr<const EmbeddingTable> embeddings, DatasetMeta meta = {});

    /// As above with the logging rows already evaluated (row i at interaction i).
    BanditDataset(std::vector<LoggedInteraction> interactions,
                  std::shared_ptr<const PolicyEvaluator> logging,
                  std::shared_ptr<const EmbeddingTable> embeddings, PolicyTable logging_rows,
                  DatasetMeta meta = {});

    std::size_t size() const { return interactions_.size(); }
    bool empty() const { return interactions_.empty(); }
    std::size_t n_actions() const { return embeddings_->n_actions(); }

    const std::vector<LoggedInteraction>& interactions() const { return interactions_; }
    const LoggedInteraction& operator[](std::size_t i) const { return interactions_[i]; }
    std::vector<Context> contexts() const;

    const PolicyEvaluator& logging_policy() const { return *logging_; }
    const std::shared_ptr<const PolicyEvaluator>& logging_policy_ptr() const { return logging_; }
    const EmbeddingTable& embeddings() const { return *embeddings_; }
    const std::shared_ptr<const EmbeddingTable>& embeddings_ptr() const { return embeddings_; }
    const PolicyTable& logging_rows() const { return logging_rows_; }
    std::span<const double> propensities() const { return propensities_; }
    const DatasetMeta& meta() const { return meta_; }

private:
    void validate();

    std::vector<LoggedInteraction> interactions_;
    std::shared_ptr<const PolicyEvaluator> logging_;
    std::shared_ptr<const EmbeddingTable> embeddings_;
    PolicyTable logging_rows_;
    std::vector<double> propensities_;
    DatasetMeta meta_;
};

/// Logged data together with the target policy tabulated at its contexts.
struct LoggedData {
    BanditDataset dataset;
    PolicyTable target;
};

/// mu(a_i | x_i) for interaction i.
double logged_propensity(const BanditDataset& dataset, std::size_t index);

/// Mean over contexts of sum_a pi(a|x) delta(a, x).
double true_value(const PolicyEvaluator& policy, const RewardOracle& oracle,
                  std::span<const Context> contexts);

}  // namespace opelab
