#pragma once

#include "opelab/action_structure.hpp"
#include "opelab/core.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opelab {

enum class Backbone { dm, ips, snips, dr, sndr };

std::string_view to_string(Backbone backbone);
Backbone parse_backbone(std::string_view text);
bool needs_reward_model(Backbone backbone);

/// Ridge regression of reward on [context || E(a) || 1]. The intercept is
/// not penalized.
class RidgeRewardModel final : public RewardOracle {
public:
    RidgeRewardModel(Vector weights, double lambda, std::size_t context_dim, bool intercept,
                     std::shared_ptr<const EmbeddingTable> embeddings);

    std::size_t n_actions() const override { return embeddings_->n_actions(); }
    double expected_reward(std::size_t action, const Context& context) const override;
    Vector reward_row(const Context& context) const override;

    const Vector& weights() const { return weights_; }
    double lambda() const { return lambda_; }

private:
    Vector weights_;
    double lambda_;
    std::size_t context_dim_;
    bool intercept_;
    std::shared_ptr<const EmbeddingTable> embeddings_;
};

RidgeRewardModel fit_reward_model(const BanditDataset& dataset, double lambda, bool fit_intercept = true);

struct EstimatorConfig {
    Backbone backbone = Backbone::ips;
    std::optional<SimilarityOperator> target_conv;
    std::optional<SimilarityOperator> logging_conv;
    std::shared_ptr<const RewardOracle> reward_model;

    bool is_pc() const { return target_conv.has_value() || logging_conv.has_value(); }
    /// Throws ArgumentError on a missing reward model or a PC config on DM.
    void validate() const;
};

struct EstimateDiagnostics {
    double value = 0.0;
    /// Terms whose mean is `value`.
    std::vector<double> per_sample_terms;
    double min_weight = 0.0;
    double max_weight = 0.0;
    /// Mean importance weight; set for the self-normalized backbones.
    std::optional<double> rho;
};

/// Reward-model quantities reused by DM, DR and SNDR: the baseline
/// sum_a pi(a|x_i) dhat(a, x_i) and the prediction dhat(a_i, x_i).
struct DirectTerms {
    std::vector<double> baseline;
    std::vector<double> logged_prediction;
};

DirectTerms direct_terms(const BanditDataset& dataset, const PolicyTable& target, const RewardOracle& model);

/// (rows(i) * f)(a_i) for every logged sample, or rows(i)[a_i] when `op` is null.
std::vector<double> convolved_propensities(const BanditDataset& dataset, const PolicyTable& rows,
                                           const SimilarityOperator* op);

/// Combine per-sample target and logging propensities (plain or convolved)
/// under a backbone. `direct` is required for DR and SNDR.
EstimateDiagnostics estimate_weighted(Backbone backbone, const BanditDataset& dataset,
                                      std::span<const double> target_propensity,
                                      std::span<const double> logging_propensity, const DirectTerms* direct);

EstimateDiagnostics estimate_dm(const BanditDataset& dataset, const PolicyTable& target, const RewardOracle& model);
EstimateDiagnostics estimate_ips(const BanditDataset& dataset, const PolicyTable& target);
EstimateDiagnostics estimate_snips(const BanditDataset& dataset, const PolicyTable& target);
EstimateDiagnostics estimate_dr(const BanditDataset& dataset, const PolicyTable& target, const RewardOracle& model);
EstimateDiagnostics estimate_sndr(const BanditDataset& dataset, const PolicyTable& target, const RewardOracle& model);
EstimateDiagnostics estimate_pc(const EstimatorConfig& config, const BanditDataset& dataset, const PolicyTable& target);

EstimateDiagnostics estimate_dm(const BanditDataset& dataset, const PolicyEvaluator& target, const RewardOracle& model);
EstimateDiagnostics estimate_ips(const BanditDataset& dataset, const PolicyEvaluator& target);
EstimateDiagnostics estimate_snips(const BanditDataset& dataset, const PolicyEvaluator& target);
EstimateDiagnostics estimate_dr(const BanditDataset& dataset, const PolicyEvaluator& target, const RewardOracle& model);
EstimateDiagnostics estimate_sndr(const BanditDataset& dataset, const PolicyEvaluator& target, const RewardOracle& model);
EstimateDiagnostics estimate_pc(const EstimatorConfig& config, const BanditDataset& dataset,
                                const PolicyEvaluator& target);

/// Dispatch on the config: PC when a convolution is present, else the backbone.
EstimateDiagnostics estimate(const EstimatorConfig& config, const BanditDataset& dataset, const PolicyTable& target);

}  // namespace opelab
