#pragma once

#include "opelab/core.hpp"
#include "opelab/rng.hpp"

#include <Eigen/SparseCore>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

namespace opelab {

struct Rating {
    std::size_t user = 0;
    std::size_t item = 0;
    int rating = 0;
};

/// Observed (user, item, rating) triples with 0-based ids.
struct RatingsMatrix {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::vector<Rating> entries;
};

/// Parse the tab-separated `user item rating timestamp` format with 1-based ids.
RatingsMatrix parse_movielens(std::istream& in);
RatingsMatrix load_movielens(const std::filesystem::path& path);

/// Row-major users x items; observed entries are stored explicitly, including zeros.
using BinaryRatings = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// 1 where the rating is at least 4, else 0. Unobserved pairs are absent.
BinaryRatings binarize(const RatingsMatrix& ratings);

struct FactorModel {
    RowMatrix user_factors;  // n_users x rank
    RowMatrix item_factors;  // n_items x rank
    Vector singular_values;
    std::size_t rank() const { return static_cast<std::size_t>(singular_values.size()); }
};

/// Truncated SVD by randomized subspace iteration; both factor sets are
/// scaled by the square root of the singular values.
FactorModel factorize(const BinaryRatings& binary, std::size_t rank, std::uint64_t seed);

/// delta(item, user): the binary reward where observed, else the factor
/// dot product clamped to [0, 1]. Contexts carry the user in `id`.
class MovielensRewardOracle final : public RewardOracle {
public:
    MovielensRewardOracle(BinaryRatings binary, std::shared_ptr<const FactorModel> factors);

    std::size_t n_actions() const override { return static_cast<std::size_t>(binary_.cols()); }
    std::size_t n_users() const { return static_cast<std::size_t>(binary_.rows()); }
    double expected_reward(std::size_t action, const Context& context) const override;
    Vector reward_row(const Context& context) const override;

private:
    std::size_t user_of(const Context& context) const;

    BinaryRatings binary_;
    std::shared_ptr<const FactorModel> factors_;
};

/// Shortlist the best `top` items and `random` other items per user, draw
/// logits U(0, 1) and U(0, 0.8) respectively, softmax them with temperature
/// `beta`, then mix with the uniform policy at weight `eps_floor`.
class TwoStageLoggingPolicy final : public PolicyEvaluator {
public:
    TwoStageLoggingPolicy(std::shared_ptr<const RewardOracle> oracle, double beta, double eps_floor,
                          std::uint64_t seed, std::size_t top = 100, std::size_t random = 400);

    std::size_t n_actions() const override { return oracle_->n_actions(); }
    Vector prob_row(const Context& context) const override;
    const RewardOracle* driving_oracle() const override { return oracle_.get(); }
    Vector prob_row_from_rewards(const Vector& rewards, const Context& context) const override;

    double eps_floor() const { return eps_floor_; }
    std::size_t shortlist_top() const { return top_; }
    std::size_t shortlist_random() const { return random_; }

private:
    std::shared_ptr<const RewardOracle> oracle_;
    double beta_;
    double eps_floor_;
    std::uint64_t seed_;
    std::size_t top_;
    std::size_t random_;
};

struct MovielensConfig {
    std::size_t rank = 16;
    double beta = 0.0;
    double eps_floor = 0.1;
    double target_epsilon = 0.05;
    std::uint64_t seed = 0;
};

/// Everything derived from one ratings file; immutable after construction.
struct MovielensWorld {
    MovielensConfig config;
    std::shared_ptr<const FactorModel> factors;
    std::shared_ptr<const MovielensRewardOracle> oracle;
    std::shared_ptr<const EmbeddingTable> embeddings;
    std::shared_ptr<const PolicyEvaluator> logging;
    std::shared_ptr<const PolicyEvaluator> target;
    /// One context per user: its factor row, with `id` set.
    std::vector<Context> users;
    std::size_t n_ones = 0;
};

MovielensWorld build_movielens_world(const RatingsMatrix& ratings, const MovielensConfig& config);

/// Exact policy value averaged over all users.
double movielens_true_value(const MovielensWorld& world, const PolicyEvaluator& policy);

/// Users drawn uniformly, actions from `logging`, rewards delta(a, user);
/// `target` is tabulated at the same users.
LoggedData generate_movielens_dataset(const MovielensWorld& world, std::shared_ptr<const PolicyEvaluator> logging,
                                      const PolicyEvaluator& target, std::size_t n, std::uint64_t seed);

}  // namespace opelab
