#pragma once

#include "opelab/action_structure.hpp"
#include "opelab/core.hpp"
#include "opelab/estimators.hpp"
#include "opelab/movielens_env.hpp"
#include "opelab/synth_env.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace opelab {

// ---------------------------------------------------------------------------
// Environments

/// One logged dataset with the target tabulated at its contexts and the
/// target's true value in the world that produced it.
struct Replicate {
    LoggedData data;
    double true_value = 0.0;
};

class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string_view name() const = 0;
    virtual std::size_t n_actions() const = 0;
    virtual std::shared_ptr<const EmbeddingTable> embeddings() const = 0;
    virtual double true_value() const = 0;
    virtual Replicate draw(std::size_t n, std::uint64_t seed) const = 0;

    /// Deepest tree available for tree convolution.
    virtual int max_tree_depth() const;
    /// Action tree for tree convolution; built by bisecting 2-means by default.
    virtual std::shared_ptr<const ActionTree> tree(int depth, std::uint64_t seed) const;
};

/// Single-context, four-action world with delta = (5, 10, 15, 20),
/// pi = (0, .2, .2, .6), mu = (.2, .2, .4, .2), deterministic rewards,
/// embeddings (0, 1, 10, 11) and the tree {0,1},{2,3} under one root.
class ToyEnvironment final : public Environment {
public:
    ToyEnvironment();

    std::string_view name() const override { return "toy"; }
    std::size_t n_actions() const override { return 4; }
    std::shared_ptr<const EmbeddingTable> embeddings() const override { return embeddings_; }
    double true_value() const override { return true_value_; }
    Replicate draw(std::size_t n, std::uint64_t seed) const override;
    int max_tree_depth() const override { return 3; }
    std::shared_ptr<const ActionTree> tree(int depth, std::uint64_t seed) const override;

    const std::shared_ptr<const PolicyEvaluator>& logging() const { return logging_; }
    const std::shared_ptr<const PolicyEvaluator>& target() const { return target_; }
    const std::shared_ptr<const RewardOracle>& oracle() const { return oracle_; }

private:
    std::shared_ptr<const EmbeddingTable> embeddings_;
    std::shared_ptr<const PolicyEvaluator> logging_;
    std::shared_ptr<const PolicyEvaluator> target_;
    std::shared_ptr<const RewardOracle> oracle_;
    std::shared_ptr<const ActionTree> tree_;
    double true_value_ = 0.0;
};

class SynthEnvironment final : public Environment {
public:
    /// The true value averages over config.n_test held-out contexts.
    SynthEnvironment(const SynthConfig& config, double deficient_fraction, unsigned jobs = 1);

    std::string_view name() const override { return "synthetic"; }
    std::size_t n_actions() const override { return world_->n_actions(); }
    std::shared_ptr<const EmbeddingTable> embeddings() const override { return world_->embeddings(); }
    double true_value() const override { return true_value_; }
    Replicate draw(std::size_t n, std::uint64_t seed) const override;

    const std::shared_ptr<const SynthWorld>& world() const { return world_; }
    const std::shared_ptr<const PolicyEvaluator>& logging() const { return logging_; }
    const std::shared_ptr<const PolicyEvaluator>& target() const { return target_; }

private:
    std::shared_ptr<const SynthWorld> world_;
    std::shared_ptr<const PolicyEvaluator> logging_;
    std::shared_ptr<const PolicyEvaluator> target_;
    double true_value_ = 0.0;
};

class MovielensEnvironment final : public Environment {
public:
    MovielensEnvironment(std::shared_ptr<const MovielensWorld> world, double deficient_fraction);

    std::string_view name() const override { return "movielens"; }
    std::size_t n_actions() const override { return world_->oracle->n_actions(); }
    std::shared_ptr<const EmbeddingTable> embeddings() const override { return world_->embeddings; }
    double true_value() const override { return true_value_; }
    Replicate draw(std::size_t n, std::uint64_t seed) const override;

    const MovielensWorld& world() const { return *world_; }

private:
    std::shared_ptr<const MovielensWorld> world_;
    std::shared_ptr<const PolicyEvaluator> logging_;
    double true_value_ = 0.0;
};

/// Produces the environment for a world seed. With `rebuild_per_seed` every
/// replicate gets its own world; otherwise one world serves all replicates.
struct EnvironmentBuilder {
    std::function<std::shared_ptr<const Environment>(std::uint64_t world_seed)> build;
    bool rebuild_per_seed = false;
};

// ---------------------------------------------------------------------------
// Estimator grid

/// "ips", "snips", "dr", "sndr", "dm" or "pc-<backbone>-<kernel|tree|ball|knn>".
struct EstimatorSpec {
    Backbone backbone = Backbone::ips;
    std::optional<ConvolutionKind> convolution;

    bool is_pc() const { return convolution.has_value(); }
    std::string name() const;
    friend bool operator==(const EstimatorSpec&, const EstimatorSpec&) = default;
};

EstimatorSpec parse_estimator_spec(std::string_view text);

/// Convolution parameters for the target (tau1) and logging (tau2) sides;
/// an empty side is left unconvolved.
///
/// Grid values are interpreted per kind: tree depth, neighbor count,
/// quantile of the pairwise squared distances (ball), or multiple of the
/// median pairwise distance (kernel bandwidth).
struct TauPair {
    std::optional<double> target;
    std::optional<double> logging;
    friend bool operator==(const TauPair&, const TauPair&) = default;
};

enum class TauConstraint { free, equal, target_only };

std::string_view to_string(TauConstraint constraint);
TauConstraint parse_tau_constraint(std::string_view text);

struct ConvolutionSettings {
    /// Explicit grids per kind; other kinds use the defaults of tau_grid.
    std::map<ConvolutionKind, std::vector<double>> tau_grids;
    TauConstraint constraint = TauConstraint::free;
    /// Tree depth D; 0 selects the environment's maximum.
    int tree_depth = 0;
    /// Keep the pair with both sides identity when other pairs exist.
    bool include_identity = false;
    bool renormalize_kernel = false;
};

/// What the tau grids depend on: the action count and the deepest tree.
struct ActionSpace {
    std::size_t n_actions = 0;
    int max_tree_depth = 1;
};

ActionSpace action_space(const Environment& env);

/// Tree depth D in use: settings.tree_depth, or the deepest tree when 0.
int resolved_tree_depth(const ActionSpace& space, const ConvolutionSettings& settings);

/// The configured grid for `kind`, else tree 1..D, knn {1,2,5,10,20,50,100}
/// capped at |A|, ball quantiles {.01,.05,.1,.25,.5}, kernel multiples
/// {.1,.25,.5,1,2,4}.
std::vector<double> tau_grid(ConvolutionKind kind, const ActionSpace& space, const ConvolutionSettings& settings);

/// Candidate pairs for one kind under the settings' constraint, in grid
/// order. Unless include_identity is set, the pair whose sides are both the
/// identity (tree depth 1, one neighbor, or unconvolved) is dropped when
/// any other pair remains.
std::vector<TauPair> candidate_pairs(ConvolutionKind kind, const ActionSpace& space,
                                     const ConvolutionSettings& settings);

/// The single pair a tau sweep uses at `value`.
TauPair pair_for_value(double value, TauConstraint constraint);

/// Prepared similarity operators for one environment.
class OperatorFactory {
public:
    /// Builds every operator in `requested` up front so the factory can be
    /// shared between threads.
    OperatorFactory(const Environment& env, const ConvolutionSettings& settings,
                    const std::vector<std::pair<ConvolutionKind, double>>& requested, std::uint64_t seed);

    const SimilarityOperator& get(ConvolutionKind kind, double tau) const;
    bool is_identity(ConvolutionKind kind, const TauPair& pair) const;

private:
    std::map<std::pair<ConvolutionKind, double>, SimilarityOperator> operators_;
};

// ---------------------------------------------------------------------------
// Replication

struct TrialResult {
    /// Successful seeds only, aligned with `true_values`.
    std::vector<double> estimates;
    std::vector<double> true_values;
    std::size_t n_seeds = 0;
    std::size_t failures = 0;
    /// More than half the seeds failed (or fewer than two succeeded); the
    /// statistics below are then left at zero and must not be reported.
    bool failed = false;
    double true_value = 0.0;
    double mse = 0.0;
    double bias_sq = 0.0;
    double variance = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::optional<TauPair> tau;
};

/// Statistics over per-seed estimates against per-seed true values. Uses the
/// errors e_s = estimate_s - truth_s: bias_sq = mean(e)^2, variance is the
/// population variance of e, mse = bias_sq + variance. The CI is
/// mean(estimate) +/- 1.96 sd / sqrt(n) with the sample standard deviation.
TrialResult summarize(std::vector<double> estimates, std::vector<double> true_values, std::size_t failures);

struct ReplicationOptions {
    std::size_t n_logged = 10000;
    double ridge_lambda = 1.0;
    ConvolutionSettings convolution;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
};

/// Seed streams; evaluation and validation never share a seed.
enum class SeedStream { evaluation, validation };

/// Estimates for every (estimator, candidate pair) on each seed of a stream.
/// Replicates are shared by all estimators (common random numbers).
struct CellRequest {
    EstimatorSpec estimator;
    std::vector<TauPair> pairs;  // ignored for non-PC estimators
};

struct CellEstimates {
    /// [request][pair][seed]; empty optional marks a failed estimate.
    std::vector<std::vector<std::vector<std::optional<double>>>> values;
    std::vector<double> true_values;  // per seed
};

CellEstimates run_cell(const EnvironmentBuilder& builder, const std::vector<CellRequest>& requests,
                       std::size_t n_seeds, SeedStream stream, const ReplicationOptions& options);

/// Replicate one estimator configuration over n_seeds evaluation seeds.
TrialResult replicate(const EnvironmentBuilder& builder, const EstimatorSpec& estimator,
                      const std::optional<TauPair>& tau, std::size_t n_seeds, const ReplicationOptions& options);

struct TauSelection {
    TauPair pair;
    double validation_mse = 0.0;
    /// Validation MSE per candidate; empty for candidates with failures.
    std::vector<std::optional<double>> candidate_mse;
};

/// Grid search over `pairs` on the validation stream: minimum validation MSE
/// among pairs with no failed seed; ties go to the smaller tau1 + tau2, then
/// the smaller tau1. Throws EstimationError when every pair fails.
TauSelection select_tau(const EnvironmentBuilder& builder, const EstimatorSpec& estimator,
                        const std::vector<TauPair>& pairs, std::size_t n_validation_seeds,
                        const ReplicationOptions& options);

/// Pick from validation estimates already computed by run_cell.
TauSelection select_from_validation(const std::vector<TauPair>& pairs,
                                    const std::vector<std::vector<std::optional<double>>>& estimates,
                                    const std::vector<double>& true_values);

// ---------------------------------------------------------------------------
// Sweeps

enum class EnvironmentKind { toy, synthetic, movielens };
enum class SweepParam { none, n_actions, beta, epsilon, n_logged, deficient_fraction, tau, embed_dim };

std::string_view to_string(EnvironmentKind kind);
EnvironmentKind parse_environment_kind(std::string_view text);
std::string_view to_string(SweepParam param);
SweepParam parse_sweep_param(std::string_view text);

struct SweepSpec {
    std::string experiment = "experiment";
    EnvironmentKind environment = EnvironmentKind::synthetic;
    SweepParam param = SweepParam::none;
    /// One cell per value; ignored (single cell) when param is none.
    std::vector<double> grid;
    std::vector<EstimatorSpec> estimators;
    std::size_t n_seeds = 50;
    std::size_t n_validation_seeds = 10;
    std::size_t n_logged = 10000;
    double ridge_lambda = 1.0;
    ConvolutionSettings convolution;
    SynthConfig synth;
    double deficient_fraction = 0.0;
    MovielensConfig movielens;
    std::filesystem::path movielens_data;
    std::uint64_t seed = 0;
    unsigned jobs = 1;

    /// Throws ArgumentError on an empty grid or estimator list, n_seeds < 2,
    /// or a parameter the environment cannot vary.
    void validate() const;
};

struct SweepRow {
    std::string experiment;
    std::string sweep_param;
    double sweep_value = 0.0;
    EstimatorSpec estimator;
    TrialResult result;
};

inline constexpr std::string_view kCsvHeader =
    "experiment,sweep_param,sweep_value,estimator,conv_kind,tau1,tau2,n_seeds,true_value,mse,bias_sq,variance,"
    "ci_low,ci_high,failures";

void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const SweepRow& row);

/// Run every cell in grid order, streaming one CSV row per (value,
/// estimator) to `out`. `on_row` (optional) sees each row as it is written.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, std::ostream& out,
                                const std::function<void(const SweepRow&)>& on_row = {});

/// As above, writing to `path`; the file is opened before any computation.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const std::filesystem::path& path,
                                const std::function<void(const SweepRow&)>& on_row = {});

/// Builder for one sweep cell. `ratings` is required for Movielens.
EnvironmentBuilder make_builder(const SweepSpec& spec, SweepParam param, double value,
                                std::shared_ptr<const RatingsMatrix> ratings);

/// The toy tree-pooling sweep over tau in {1, 2, 3} with tau1 = tau2.
SweepSpec toy_spec(std::size_t n_seeds = 50000, std::size_t n_logged = 10);

}  // namespace opelab
