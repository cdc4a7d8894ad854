#pragma once

#include "opelab/core.hpp"
#include "opelab/rng.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace opelab {

/// Synthetic contextual-bandit environment with topic-structured action
/// embeddings and a random two-layer reward network.
struct SynthConfig {
    std::size_t n_actions = 2000;
    std::size_t n_topics = 32;
    std::size_t d_context = 32;
    std::size_t d_embed = 16;
    std::size_t d_noise = 8;
    std::size_t hidden_width = 32;
    /// Fixed noise draws averaged into delta(a, x). Collapses to one draw
    /// when d_noise is 0.
    std::size_t noise_draws = 64;
    double beta = 0.0;
    double epsilon = 0.05;
    std::size_t n_logged = 10000;
    std::size_t n_test = 100000;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Named presets for the logging temperature and target greediness.
namespace presets {
inline constexpr double mu_uniform = 0.0;
inline constexpr double mu_good = 3.0;
inline constexpr double mu_bad = -3.0;
inline constexpr double pi_good = 0.05;
inline constexpr double pi_bad = 0.8;
}  // namespace presets

/// A generated world. Acts as the reward oracle:
///   delta(a, x) = mean_m sigmoid(net(x || E(a) || noise_m))
/// over the world's fixed noise draws. The network is tanh-hidden,
/// linear-output; its hidden layer is evaluated in single precision.
class SynthWorld final : public RewardOracle {
public:
    explicit SynthWorld(const SynthConfig& config);

    const SynthConfig& config() const { return config_; }
    std::size_t n_actions() const override { return config_.n_actions; }
    const std::shared_ptr<const EmbeddingTable>& embeddings() const { return embeddings_; }
    const std::vector<std::size_t>& topic_of() const { return topic_of_; }
    const RowMatrix& topic_means() const { return topic_means_; }
    const RowMatrix& topic_scales() const { return topic_scales_; }
    const RowMatrix& noise_draws() const { return noise_; }

    double expected_reward(std::size_t action, const Context& context) const override;
    Vector reward_row(const Context& context) const override;

    /// Reward realization under one of the world's noise draws, picked
    /// uniformly; its expectation is expected_reward.
    double sampled_reward(std::size_t action, const Context& context, Rng& rng) const;

    /// Pre-sigmoid network output for a full input vector (double precision).
    double network_output(const Vector& input) const;

    /// x ~ N(0, I).
    std::vector<Context> sample_contexts(std::size_t n, Rng& rng) const;

private:
    Eigen::VectorXf hidden_context_term(const Context& context) const;
    void rewards_from_hidden(const Eigen::VectorXf& context_term, std::size_t first, std::size_t count,
                             double* out) const;

    SynthConfig config_;
    std::vector<std::size_t> topic_of_;
    RowMatrix topic_means_;
    RowMatrix topic_scales_;
    std::shared_ptr<const EmbeddingTable> embeddings_;
    Eigen::MatrixXd w1_;  // hidden x (d_context + d_embed + d_noise)
    Vector b1_;
    Vector w2_;
    double b2_ = 0.0;
    RowMatrix noise_;  // noise_draws x d_noise

    Eigen::MatrixXf action_term_;                                                    // hidden x n_actions
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> noise_term_;  // hidden x draws
    Eigen::VectorXf w2f_;
};

std::shared_ptr<const SynthWorld> build_world(const SynthConfig& config);

/// mu(a|x) = softmax_a(beta * delta(a, x)).
class SoftmaxPolicy final : public PolicyEvaluator {
public:
    SoftmaxPolicy(std::shared_ptr<const RewardOracle> oracle, double beta);

    std::size_t n_actions() const override { return oracle_->n_actions(); }
    Vector prob_row(const Context& context) const override;
    const RewardOracle* driving_oracle() const override { return oracle_.get(); }
    Vector prob_row_from_rewards(const Vector& rewards, const Context& context) const override;
    double beta() const { return beta_; }

private:
    std::shared_ptr<const RewardOracle> oracle_;
    double beta_;
};

/// pi(a|x) = (1 - eps) * [a = argmax delta(., x)] + eps / |A|; ties go to
/// the lowest index.
class EpsilonGreedyPolicy final : public PolicyEvaluator {
public:
    EpsilonGreedyPolicy(std::shared_ptr<const RewardOracle> oracle, double epsilon);

    std::size_t n_actions() const override { return oracle_->n_actions(); }
    Vector prob_row(const Context& context) const override;
    const RewardOracle* driving_oracle() const override { return oracle_.get(); }
    Vector prob_row_from_rewards(const Vector& rewards, const Context& context) const override;
    double epsilon() const { return epsilon_; }

private:
    std::shared_ptr<const RewardOracle> oracle_;
    double epsilon_;
};

/// Wraps a policy, zeroes a global set of actions and renormalizes each row.
class SupportMaskedPolicy final : public PolicyEvaluator {
public:
    SupportMaskedPolicy(std::shared_ptr<const PolicyEvaluator> inner, std::vector<bool> masked);

    std::size_t n_actions() const override { return inner_->n_actions(); }
    Vector prob_row(const Context& context) const override;
    const RewardOracle* driving_oracle() const override { return inner_->driving_oracle(); }
    Vector prob_row_from_rewards(const Vector& rewards, const Context& context) const override;
    const std::vector<bool>& masked() const { return masked_; }

private:
    Vector mask(Vector row) const;

    std::shared_ptr<const PolicyEvaluator> inner_;
    std::vector<bool> masked_;
};

std::shared_ptr<const PolicyEvaluator> logging_policy(std::shared_ptr<const SynthWorld> world, double beta);
std::shared_ptr<const PolicyEvaluator> target_policy(std::shared_ptr<const SynthWorld> world, double epsilon);

/// Remove ceil(fraction * |A|) randomly chosen actions from the support of
/// every row. fraction 0 returns `logging` itself.
std::shared_ptr<const PolicyEvaluator> apply_deficient_support(std::shared_ptr<const PolicyEvaluator> logging,
                                                               double deficient_fraction, std::uint64_t seed);

BanditDataset generate_dataset(const SynthWorld& world, std::shared_ptr<const PolicyEvaluator> logging,
                               std::size_t n, std::uint64_t seed);

/// As generate_dataset (same draws for the same seed), also tabulating
/// `target` at the logged contexts.
LoggedData generate_dataset_with_target(const SynthWorld& world, std::shared_ptr<const PolicyEvaluator> logging,
                                        const PolicyEvaluator& target, std::size_t n, std::uint64_t seed);

}  // namespace opelab
