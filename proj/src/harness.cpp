#include "opelab/harness.hpp"

#include "opelab/errors.hpp"
#include "opelab/parallel.hpp"
#include "opelab/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <tuple>

namespace opelab {

// ---------------------------------------------------------------------------
// Environments

int Environment::max_tree_depth() const { return ::opelab::max_tree_depth(n_actions()); }

std::shared_ptr<const ActionTree> Environment::tree(int depth, std::uint64_t seed) const {
    return std::make_shared<const ActionTree>(build_tree(*embeddings(), depth, seed));
}

ToyEnvironment::ToyEnvironment() {
    RowMatrix emb(4, 1);
    emb << 0.0, 1.0, 10.0, 11.0;
    RowMatrix mu(1, 4);
    mu << 0.2, 0.2, 0.4, 0.2;
    RowMatrix pi(1, 4);
    pi << 0.0, 0.2, 0.2, 0.6;
    RowMatrix delta(1, 4);
    delta << 5.0, 10.0, 15.0, 20.0;
    embeddings_ = std::make_shared<const EmbeddingTable>(std::move(emb));
    logging_ = std::make_shared<const TabularPolicy>(std::move(mu));
    target_ = std::make_shared<const TabularPolicy>(std::move(pi));
    oracle_ = std::make_shared<const TabularRewardOracle>(std::move(delta));
    tree_ = std::make_shared<const ActionTree>(std::vector<ActionTree::Level>{
        {{0}, {1}, {2}, {3}},
        {{0, 1}, {2, 3}},
        {{0, 1, 2, 3}},
    });
    const Context context = tabular_context(0, 1);
    true_value_ = ::opelab::true_value(*target_, *oracle_, std::span<const Context>(&context, 1));
}

std::shared_ptr<const ActionTree> ToyEnvironment::tree(int depth, std::uint64_t) const {
    if (depth != tree_->depth()) {
        throw ArgumentError("the toy world has a fixed tree of depth " + std::to_string(tree_->depth()));
    }
    return tree_;
}

Replicate ToyEnvironment::draw(std::size_t n, std::uint64_t seed) const {
    if (n == 0) throw ArgumentError("dataset size must be at least 1");
    const std::vector<Context> contexts(n, tabular_context(0, 1));
    PolicyTable logging_rows = tabulate(*logging_, contexts);
    PolicyTable target_rows = tabulate(*target_, contexts);
    Rng rng = make_rng(seed, "actions");
    std::vector<LoggedInteraction> interactions(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& it = interactions[i];
        it.context = contexts[i];
        it.action = sample_discrete(logging_rows.row(i), rng);
        it.reward = oracle_->expected_reward(it.action, it.context);
    }
    BanditDataset dataset(std::move(interactions), logging_, embeddings_, std::move(logging_rows),
                          DatasetMeta{"toy", seed});
    return Replicate{LoggedData{std::move(dataset), std::move(target_rows)}, true_value_};
}

SynthEnvironment::SynthEnvironment(const SynthConfig& config, double deficient_fraction, unsigned jobs) {
    world_ = build_world(config);
    logging_ = apply_deficient_support(logging_policy(world_, config.beta), deficient_fraction,
                                       derive_seed(config.seed, "support"));
    target_ = target_policy(world_, config.epsilon);

    Rng rng = make_rng(config.seed, "test-contexts");
    const std::vector<Context> contexts = world_->sample_contexts(config.n_test, rng);
    constexpr std::size_t chunk = 512;
    const std::size_t n_chunks = (contexts.size() + chunk - 1) / chunk;
    std::vector<double> sums(n_chunks, 0.0);
    parallel_for(n_chunks, jobs, [&](std::size_t c) {
        const std::size_t begin = c * chunk;
        const std::size_t count = std::min(chunk, contexts.size() - begin);
        const std::span<const Context> part(contexts.data() + begin, count);
        sums[c] = ::opelab::true_value(*target_, *world_, part) * static_cast<double>(count);
    });
    true_value_ = std::accumulate(sums.begin(), sums.end(), 0.0) / static_cast<double>(contexts.size());
}

Replicate SynthEnvironment::draw(std::size_t n, std::uint64_t seed) const {
    return Replicate{generate_dataset_with_target(*world_, logging_, *target_, n, seed), true_value_};
}

MovielensEnvironment::MovielensEnvironment(std::shared_ptr<const MovielensWorld> world, double deficient_fraction)
    : world_(std::move(world)) {
    if (!world_) throw ArgumentError("Movielens environment needs a world");
    logging_ = apply_deficient_support(world_->logging, deficient_fraction,
                                       derive_seed(world_->config.seed, "support"));
    true_value_ = movielens_true_value(*world_, *world_->target);
}

Replicate MovielensEnvironment::draw(std::size_t n, std::uint64_t seed) const {
    return Replicate{generate_movielens_dataset(*world_, logging_, *world_->target, n, seed), true_value_};
}

// ---------------------------------------------------------------------------
// Estimator grid

std::string EstimatorSpec::name() const {
    std::string out = is_pc() ? "pc-" : "";
    out += to_string(backbone);
    if (convolution) {
        out += '-';
        out += to_string(*convolution);
    }
    return out;
}

EstimatorSpec parse_estimator_spec(std::string_view text) {
    EstimatorSpec spec;
    if (text.starts_with("pc-")) {
        const std::string_view rest = text.substr(3);
        const auto dash = rest.find('-');
        if (dash == std::string_view::npos) {
            throw ArgumentError("estimator '" + std::string(text) + "' must read pc-<backbone>-<convolution>");
        }
        spec.backbone = parse_backbone(rest.substr(0, dash));
        spec.convolution = parse_convolution_kind(rest.substr(dash + 1));
        if (spec.backbone == Backbone::dm) {
            throw ArgumentError("policy convolution needs an importance-weighted backbone, got '" + std::string(text) +
                                "'");
        }
        return spec;
    }
    spec.backbone = parse_backbone(text);
    return spec;
}

std::string_view to_string(TauConstraint constraint) {
    switch (constraint) {
        case TauConstraint::free: return "free";
        case TauConstraint::equal: return "equal";
        case TauConstraint::target_only: return "target_only";
    }
    return "?";
}

TauConstraint parse_tau_constraint(std::string_view text) {
    if (text == "free") return TauConstraint::free;
    if (text == "equal") return TauConstraint::equal;
    if (text == "target_only") return TauConstraint::target_only;
    throw ArgumentError("unknown tau constraint '" + std::string(text) + "' (free, equal, target_only)");
}

ActionSpace action_space(const Environment& env) { return ActionSpace{env.n_actions(), env.max_tree_depth()}; }

int resolved_tree_depth(const ActionSpace& space, const ConvolutionSettings& settings) {
    if (settings.tree_depth < 0) throw ArgumentError("tree_depth must be nonnegative");
    if (settings.tree_depth == 0) return space.max_tree_depth;
    if (settings.tree_depth > space.max_tree_depth) {
        throw ArgumentError("tree_depth " + std::to_string(settings.tree_depth) + " exceeds the maximum " +
                            std::to_string(space.max_tree_depth) + " for " + std::to_string(space.n_actions) +
                            " actions");
    }
    return settings.tree_depth;
}

namespace {

bool is_whole(double v) { return std::isfinite(v) && v == std::floor(v); }

void check_tau(ConvolutionKind kind, double tau, const ActionSpace& space, int depth) {
    const auto bad = [&](const std::string& why) {
        throw ArgumentError(std::string(to_string(kind)) + " tau " + std::to_string(tau) + ": " + why);
    };
    switch (kind) {
        case ConvolutionKind::tree:
            if (!is_whole(tau) || tau < 1 || tau > depth) bad("must be a depth in [1, " + std::to_string(depth) + "]");
            break;
        case ConvolutionKind::knn:
            if (!is_whole(tau) || tau < 1 || tau > static_cast<double>(space.n_actions)) {
                bad("must be a neighbor count in [1, " + std::to_string(space.n_actions) + "]");
            }
            break;
        case ConvolutionKind::ball:
            if (!(tau > 0.0 && tau <= 1.0)) bad("must be a distance quantile in (0, 1]");
            break;
        case ConvolutionKind::kernel:
            if (!(tau > 0.0) || !std::isfinite(tau)) bad("must be a positive bandwidth multiple");
            break;
    }
}

bool statically_identity(ConvolutionKind kind, const std::optional<double>& tau) {
    if (!tau) return true;
    return (kind == ConvolutionKind::tree || kind == ConvolutionKind::knn) && *tau == 1.0;
}

}  // namespace

std::vector<double> tau_grid(ConvolutionKind kind, const ActionSpace& space, const ConvolutionSettings& settings) {
    const int depth = resolved_tree_depth(space, settings);
    std::vector<double> grid;
    if (const auto it = settings.tau_grids.find(kind); it != settings.tau_grids.end()) {
        grid = it->second;
        if (grid.empty()) throw ArgumentError(std::string(to_string(kind)) + " tau grid is empty");
    } else {
        switch (kind) {
            case ConvolutionKind::tree:
                for (int d = 1; d <= depth; ++d) grid.push_back(d);
                break;
            case ConvolutionKind::knn:
                for (double k : {1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0}) {
                    if (k <= static_cast<double>(space.n_actions)) grid.push_back(k);
                }
                break;
            case ConvolutionKind::ball: grid = {0.01, 0.05, 0.10, 0.25, 0.50}; break;
            case ConvolutionKind::kernel: grid = {0.1, 0.25, 0.5, 1.0, 2.0, 4.0}; break;
        }
    }
    for (double tau : grid) check_tau(kind, tau, space, depth);
    return grid;
}

std::vector<TauPair> candidate_pairs(ConvolutionKind kind, const ActionSpace& space,
                                     const ConvolutionSettings& settings) {
    const std::vector<double> grid = tau_grid(kind, space, settings);
    std::vector<TauPair> pairs;
    switch (settings.constraint) {
        case TauConstraint::equal:
            for (double t : grid) pairs.push_back({t, t});
            break;
        case TauConstraint::target_only:
            for (double t : grid) pairs.push_back({t, std::nullopt});
            break;
        case TauConstraint::free:
            for (double t1 : grid)
                for (double t2 : grid) pairs.push_back({t1, t2});
            break;
    }
    if (!settings.include_identity) {
        std::vector<TauPair> kept;
        for (const auto& p : pairs) {
            if (!(statically_identity(kind, p.target) && statically_identity(kind, p.logging))) kept.push_back(p);
        }
        if (!kept.empty()) pairs = std::move(kept);
    }
    return pairs;
}

TauPair pair_for_value(double value, TauConstraint constraint) {
    if (constraint == TauConstraint::target_only) return {value, std::nullopt};
    return {value, value};
}

OperatorFactory::OperatorFactory(const Environment& env, const ConvolutionSettings& settings,
                                 const std::vector<std::pair<ConvolutionKind, double>>& requested,
                                 std::uint64_t seed) {
    if (requested.empty()) return;
    const ActionSpace space = action_space(env);
    const int depth = resolved_tree_depth(space, settings);
    for (const auto& [kind, tau] : requested) check_tau(kind, tau, space, depth);

    const auto needs = [&](ConvolutionKind kind) {
        return std::any_of(requested.begin(), requested.end(), [kind](const auto& r) { return r.first == kind; });
    };

    std::shared_ptr<const PairwiseDistances> distances;
    if (needs(ConvolutionKind::kernel) || needs(ConvolutionKind::ball) || needs(ConvolutionKind::knn)) {
        distances = std::make_shared<const PairwiseDistances>(env.embeddings());
    }
    std::vector<double> sample;
    if (needs(ConvolutionKind::kernel) || needs(ConvolutionKind::ball)) {
        sample = distances->pair_sample(200000, derive_seed(seed, "distance-sample"));
        if (sample.empty()) throw ArgumentError("distance-based convolution needs at least two actions");
        std::sort(sample.begin(), sample.end());
    }
    std::shared_ptr<const NeighborIndex> neighbors;
    if (needs(ConvolutionKind::knn)) {
        std::size_t k_max = 1;
        for (const auto& [kind, tau] : requested) {
            if (kind == ConvolutionKind::knn) k_max = std::max(k_max, static_cast<std::size_t>(tau));
        }
        neighbors = std::make_shared<const NeighborIndex>(*distances, k_max);
    }
    std::shared_ptr<const ActionTree> tree;
    if (needs(ConvolutionKind::tree)) tree = env.tree(depth, derive_seed(seed, "tree"));

    for (const auto& [kind, tau] : requested) {
        const auto key = std::make_pair(kind, tau);
        if (operators_.contains(key)) continue;
        switch (kind) {
            case ConvolutionKind::tree:
                operators_.emplace(key, SimilarityOperator::tree(tree, static_cast<int>(tau)));
                break;
            case ConvolutionKind::knn:
                operators_.emplace(key, SimilarityOperator::knn(neighbors, static_cast<std::size_t>(tau)));
                break;
            case ConvolutionKind::ball: {
                const auto rank = static_cast<std::size_t>(std::ceil(tau * static_cast<double>(sample.size())));
                double radius = sample[std::clamp<std::size_t>(rank, 1, sample.size()) - 1];
                // coincident embeddings give a zero quantile; keep the ball at self plus duplicates
                if (!(radius > 0.0)) radius = std::numeric_limits<double>::min();
                operators_.emplace(key, SimilarityOperator::ball(distances, radius));
                break;
            }
            case ConvolutionKind::kernel: {
                const double median = std::sqrt(sample[(sample.size() - 1) / 2]);
                if (!(median > 0.0)) throw ArgumentError("median pairwise distance is zero; kernel bandwidth undefined");
                operators_.emplace(key, SimilarityOperator::kernel(distances, tau * median, settings.renormalize_kernel));
                break;
            }
        }
    }
}

const SimilarityOperator& OperatorFactory::get(ConvolutionKind kind, double tau) const {
    const auto it = operators_.find({kind, tau});
    if (it == operators_.end()) {
        throw ArgumentError("no prepared " + std::string(to_string(kind)) + " operator for tau " + std::to_string(tau));
    }
    return it->second;
}

bool OperatorFactory::is_identity(ConvolutionKind kind, const TauPair& pair) const {
    const auto side = [&](const std::optional<double>& tau) { return !tau || get(kind, *tau).is_identity(); };
    return side(pair.target) && side(pair.logging);
}

// ---------------------------------------------------------------------------
// Replication

TrialResult summarize(std::vector<double> estimates, std::vector<double> true_values, std::size_t failures) {
    if (estimates.size() != true_values.size()) throw ArgumentError("estimates and true values differ in length");
    TrialResult r;
    r.estimates = std::move(estimates);
    r.true_values = std::move(true_values);
    r.failures = failures;
    r.n_seeds = r.estimates.size() + failures;
    const std::size_t n = r.estimates.size();
    if (2 * failures > r.n_seeds || n < 2) {
        r.failed = true;
        return r;
    }
    const double dn = static_cast<double>(n);
    r.true_value = std::accumulate(r.true_values.begin(), r.true_values.end(), 0.0) / dn;
    double mean_error = 0.0;
    double mean_estimate = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        mean_error += r.estimates[s] - r.true_values[s];
        mean_estimate += r.estimates[s];
    }
    mean_error /= dn;
    mean_estimate /= dn;
    double spread = 0.0;
    double estimate_spread = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        const double d = r.estimates[s] - r.true_values[s] - mean_error;
        spread += d * d;
        const double e = r.estimates[s] - mean_estimate;
        estimate_spread += e * e;
    }
    r.bias_sq = mean_error * mean_error;
    r.variance = spread / dn;
    r.mse = r.bias_sq + r.variance;
    const double half_width = 1.96 * std::sqrt(estimate_spread / (dn - 1.0)) / std::sqrt(dn);
    r.ci_low = mean_estimate - half_width;
    r.ci_high = mean_estimate + half_width;
    return r;
}

namespace {

/// Per-replicate caches: propensity vectors per (side, kind, tau) and the
/// reward-model terms, so every estimator and candidate pair shares them.
class Workspace {
public:
    Workspace(const Replicate& replicate, const OperatorFactory* operators, double ridge_lambda)
        : replicate_(replicate), operators_(operators), ridge_lambda_(ridge_lambda) {}

    std::optional<double> estimate(const EstimatorSpec& spec, const TauPair* pair) {
        try {
            const BanditDataset& ds = replicate_.data.dataset;
            if (spec.backbone == Backbone::dm) {
                const auto& base = direct().baseline;
                return std::accumulate(base.begin(), base.end(), 0.0) / static_cast<double>(base.size());
            }
            const DirectTerms* terms = needs_reward_model(spec.backbone) ? &direct() : nullptr;
            std::optional<double> tau_target;
            std::optional<double> tau_logging;
            if (spec.is_pc()) {
                if (pair == nullptr) throw ArgumentError("PC estimator needs a tau pair");
                tau_target = pair->target;
                tau_logging = pair->logging;
            }
            const auto& target = propensities(true, spec.convolution, tau_target);
            const auto& logging = propensities(false, spec.convolution, tau_logging);
            const double value = estimate_weighted(spec.backbone, ds, target, logging, terms).value;
            if (!std::isfinite(value)) return std::nullopt;
            return value;
        } catch (const EstimationError&) {
            return std::nullopt;
        }
    }

private:
    const std::vector<double>& propensities(bool target_side, std::optional<ConvolutionKind> kind,
                                            std::optional<double> tau) {
        const int kind_key = (kind && tau) ? static_cast<int>(*kind) : -1;
        const auto key = std::make_tuple(target_side, kind_key, tau.value_or(0.0));
        if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
        const BanditDataset& ds = replicate_.data.dataset;
        const PolicyTable& rows = target_side ? replicate_.data.target : ds.logging_rows();
        const SimilarityOperator* op = kind_key >= 0 ? &operators_->get(*kind, *tau) : nullptr;
        return cache_.emplace(key, convolved_propensities(ds, rows, op)).first->second;
    }

    const DirectTerms& direct() {
        if (!direct_) {
            const RidgeRewardModel model = fit_reward_model(replicate_.data.dataset, ridge_lambda_);
            direct_ = direct_terms(replicate_.data.dataset, replicate_.data.target, model);
        }
        return *direct_;
    }

    const Replicate& replicate_;
    const OperatorFactory* operators_;
    double ridge_lambda_;
    std::map<std::tuple<bool, int, double>, std::vector<double>> cache_;
    std::optional<DirectTerms> direct_;
};

std::vector<std::pair<ConvolutionKind, double>> requested_operators(const std::vector<CellRequest>& requests) {
    std::set<std::pair<ConvolutionKind, double>> out;
    for (const auto& r : requests) {
        if (!r.estimator.is_pc()) continue;
        for (const auto& p : r.pairs) {
            if (p.target) out.emplace(*r.estimator.convolution, *p.target);
            if (p.logging) out.emplace(*r.estimator.convolution, *p.logging);
        }
    }
    return {out.begin(), out.end()};
}

}  // namespace

CellEstimates run_cell(const EnvironmentBuilder& builder, const std::vector<CellRequest>& requests,
                       std::size_t n_seeds, SeedStream stream, const ReplicationOptions& options) {
    if (!builder.build) throw ArgumentError("environment builder is empty");
    for (const auto& r : requests) {
        if (r.estimator.is_pc() && r.pairs.empty()) {
            throw ArgumentError("PC estimator " + r.estimator.name() + " has no tau pair");
        }
    }
    const bool validation = stream == SeedStream::validation;
    const std::string_view world_label = validation ? "validation-world" : "world";
    const std::string_view data_label = validation ? "validation-data" : "data";
    const auto requested = requested_operators(requests);

    std::shared_ptr<const Environment> shared_env;
    std::optional<OperatorFactory> shared_ops;
    if (!builder.rebuild_per_seed) {
        shared_env = builder.build(derive_seed(options.seed, "world"));
        shared_ops.emplace(*shared_env, options.convolution, requested, derive_seed(options.seed, "operators"));
    }

    CellEstimates out;
    out.true_values.assign(n_seeds, 0.0);
    out.values.resize(requests.size());
    for (std::size_t r = 0; r < requests.size(); ++r) {
        const std::size_t n_pairs = requests[r].estimator.is_pc() ? requests[r].pairs.size() : 1;
        out.values[r].assign(n_pairs, std::vector<std::optional<double>>(n_seeds));
    }

    parallel_for(n_seeds, options.jobs, [&](std::size_t s) {
        std::shared_ptr<const Environment> env = shared_env;
        std::optional<OperatorFactory> local_ops;
        const OperatorFactory* ops = shared_ops ? &*shared_ops : nullptr;
        if (!env) {
            const std::uint64_t world_seed = derive_seed(options.seed, world_label, s);
            env = builder.build(world_seed);
            ops = &local_ops.emplace(*env, options.convolution, requested, derive_seed(world_seed, "operators"));
        }
        const Replicate replicate = env->draw(options.n_logged, derive_seed(options.seed, data_label, s));
        out.true_values[s] = replicate.true_value;
        Workspace workspace(replicate, ops, options.ridge_lambda);
        for (std::size_t r = 0; r < requests.size(); ++r) {
            const auto& req = requests[r];
            if (!req.estimator.is_pc()) {
                out.values[r][0][s] = workspace.estimate(req.estimator, nullptr);
                continue;
            }
            for (std::size_t p = 0; p < req.pairs.size(); ++p) {
                out.values[r][p][s] = workspace.estimate(req.estimator, &req.pairs[p]);
            }
        }
    });
    return out;
}

namespace {

TrialResult summarize_series(const std::vector<std::optional<double>>& values, const std::vector<double>& truths) {
    std::vector<double> estimates;
    std::vector<double> kept_truths;
    std::size_t failures = 0;
    for (std::size_t s = 0; s < values.size(); ++s) {
        if (values[s]) {
            estimates.push_back(*values[s]);
            kept_truths.push_back(truths[s]);
        } else {
            ++failures;
        }
    }
    return summarize(std::move(estimates), std::move(kept_truths), failures);
}

}  // namespace

TrialResult replicate(const EnvironmentBuilder& builder, const EstimatorSpec& estimator,
                      const std::optional<TauPair>& tau, std::size_t n_seeds, const ReplicationOptions& options) {
    if (n_seeds < 2) throw ArgumentError("replication needs at least two seeds");
    CellRequest request{estimator, {}};
    if (estimator.is_pc()) {
        if (!tau) throw ArgumentError("PC estimator " + estimator.name() + " needs a tau pair");
        request.pairs.push_back(*tau);
    }
    const CellEstimates cell = run_cell(builder, {request}, n_seeds, SeedStream::evaluation, options);
    TrialResult result = summarize_series(cell.values[0][0], cell.true_values);
    if (estimator.is_pc()) result.tau = tau;
    return result;
}

TauSelection select_from_validation(const std::vector<TauPair>& pairs,
                                    const std::vector<std::vector<std::optional<double>>>& estimates,
                                    const std::vector<double>& true_values) {
    if (pairs.empty()) throw ArgumentError("tau grid is empty");
    if (estimates.size() != pairs.size()) throw ArgumentError("validation estimates do not match the pairs");
    TauSelection out;
    out.candidate_mse.resize(pairs.size());
    std::optional<std::size_t> best;
    const auto sum = [](const TauPair& p) { return p.target.value_or(0.0) + p.logging.value_or(0.0); };
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto& series = estimates[p];
        if (series.empty() ||
            std::any_of(series.begin(), series.end(), [](const auto& v) { return !v.has_value(); })) {
            continue;
        }
        double mse = 0.0;
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double e = *series[s] - true_values[s];
            mse += e * e;
        }
        mse /= static_cast<double>(series.size());
        out.candidate_mse[p] = mse;
        if (!best) {
            best = p;
            continue;
        }
        const double best_mse = *out.candidate_mse[*best];
        const auto key = std::make_tuple(mse, sum(pairs[p]), pairs[p].target.value_or(0.0));
        const auto best_key = std::make_tuple(best_mse, sum(pairs[*best]), pairs[*best].target.value_or(0.0));
        if (key < best_key) best = p;
    }
    if (!best) throw EstimationError("every candidate tau pair failed on the validation seeds");
    out.pair = pairs[*best];
    out.validation_mse = *out.candidate_mse[*best];
    return out;
}

TauSelection select_tau(const EnvironmentBuilder& builder, const EstimatorSpec& estimator,
                        const std::vector<TauPair>& pairs, std::size_t n_validation_seeds,
                        const ReplicationOptions& options) {
    if (!estimator.is_pc()) throw ArgumentError("tau selection applies to PC estimators only");
    if (pairs.empty()) throw ArgumentError("tau grid is empty");
    if (n_validation_seeds < 1) throw ArgumentError("tau selection needs at least one validation seed");
    const CellEstimates cell =
        run_cell(builder, {CellRequest{estimator, pairs}}, n_validation_seeds, SeedStream::validation, options);
    return select_from_validation(pairs, cell.values[0], cell.true_values);
}

// ---------------------------------------------------------------------------
// Sweeps

std::string_view to_string(EnvironmentKind kind) {
    switch (kind) {
        case EnvironmentKind::toy: return "toy";
        case EnvironmentKind::synthetic: return "synthetic";
        case EnvironmentKind::movielens: return "movielens";
    }
    return "?";
}

EnvironmentKind parse_environment_kind(std::string_view text) {
    if (text == "toy") return EnvironmentKind::toy;
    if (text == "synthetic") return EnvironmentKind::synthetic;
    if (text == "movielens") return EnvironmentKind::movielens;
    throw ArgumentError("unknown environment '" + std::string(text) + "' (toy, synthetic, movielens)");
}

std::string_view to_string(SweepParam param) {
    switch (param) {
        case SweepParam::none: return "none";
        case SweepParam::n_actions: return "n_actions";
        case SweepParam::beta: return "beta";
        case SweepParam::epsilon: return "epsilon";
        case SweepParam::n_logged: return "n_logged";
        case SweepParam::deficient_fraction: return "deficient_fraction";
        case SweepParam::tau: return "tau";
        case SweepParam::embed_dim: return "embed_dim";
    }
    return "?";
}

SweepParam parse_sweep_param(std::string_view text) {
    for (auto p : {SweepParam::none, SweepParam::n_actions, SweepParam::beta, SweepParam::epsilon,
                   SweepParam::n_logged, SweepParam::deficient_fraction, SweepParam::tau, SweepParam::embed_dim}) {
        if (text == to_string(p)) return p;
    }
    throw ArgumentError("unknown sweep parameter '" + std::string(text) + "'");
}

void SweepSpec::validate() const {
    if (experiment.empty() || experiment.find_first_of(",\"\n\r") != std::string::npos) {
        throw ArgumentError("experiment name must be nonempty and free of commas, quotes and newlines");
    }
    if (estimators.empty()) throw ArgumentError("no estimators configured");
    if (n_seeds < 2) throw ArgumentError("n_seeds must be at least 2");
    if (n_logged == 0) throw ArgumentError("n_logged must be positive");
    if (!(ridge_lambda > 0.0)) throw ArgumentError("ridge_lambda must be positive");
    if (jobs == 0) throw ArgumentError("jobs must be at least 1");
    if (param != SweepParam::none && grid.empty()) throw ArgumentError("sweep grid is empty");
    const bool needs_selection = param != SweepParam::tau &&
                                 std::any_of(estimators.begin(), estimators.end(), [](const auto& e) { return e.is_pc(); });
    if (needs_selection && n_validation_seeds < 1) throw ArgumentError("n_validation_seeds must be positive");
    if (!(deficient_fraction >= 0.0 && deficient_fraction < 1.0)) {
        throw ArgumentError("deficient_fraction must be in [0, 1)");
    }

    switch (environment) {
        case EnvironmentKind::toy:
            if (param != SweepParam::none && param != SweepParam::n_logged && param != SweepParam::tau) {
                throw ArgumentError("the toy environment can only sweep n_logged or tau");
            }
            if (deficient_fraction != 0.0) throw ArgumentError("the toy environment has fixed policies");
            break;
        case EnvironmentKind::synthetic: synth.validate(); break;
        case EnvironmentKind::movielens:
            if (param == SweepParam::n_actions) throw ArgumentError("the Movielens item count is fixed by the data");
            if (movielens_data.empty()) throw ArgumentError("movielens_data path is required");
            break;
    }

    for (double v : grid) {
        const auto bad = [&](const char* why) {
            throw ArgumentError(std::string(to_string(param)) + " value " + std::to_string(v) + " " + why);
        };
        switch (param) {
            case SweepParam::n_actions:
                if (!is_whole(v) || v < 2) bad("must be an integer >= 2");
                break;
            case SweepParam::n_logged:
            case SweepParam::embed_dim:
                if (!is_whole(v) || v < 1) bad("must be a positive integer");
                break;
            case SweepParam::epsilon:
                if (!(v >= 0.0 && v <= 1.0)) bad("must be in [0, 1]");
                break;
            case SweepParam::deficient_fraction:
                if (!(v >= 0.0 && v < 1.0)) bad("must be in [0, 1)");
                break;
            case SweepParam::beta:
            case SweepParam::tau:
                if (!std::isfinite(v)) bad("must be finite");
                break;
            case SweepParam::none: break;
        }
    }
}

EnvironmentBuilder make_builder(const SweepSpec& spec, SweepParam param, double value,
                                std::shared_ptr<const RatingsMatrix> ratings) {
    double fraction = spec.deficient_fraction;
    if (param == SweepParam::deficient_fraction) fraction = value;

    switch (spec.environment) {
        case EnvironmentKind::toy: {
            auto env = std::make_shared<const ToyEnvironment>();
            return EnvironmentBuilder{[env](std::uint64_t) -> std::shared_ptr<const Environment> { return env; },
                                      false};
        }
        case EnvironmentKind::synthetic: {
            SynthConfig config = spec.synth;
            if (param == SweepParam::n_actions) {
                config.n_actions = static_cast<std::size_t>(value);
                config.n_topics = std::min(config.n_topics, config.n_actions);
            }
            if (param == SweepParam::beta) config.beta = value;
            if (param == SweepParam::epsilon) config.epsilon = value;
            if (param == SweepParam::embed_dim) config.d_embed = static_cast<std::size_t>(value);
            const bool per_seed = param == SweepParam::n_actions || param == SweepParam::embed_dim;
            const unsigned jobs = per_seed ? 1u : spec.jobs;
            return EnvironmentBuilder{
                [config, fraction, jobs](std::uint64_t world_seed) -> std::shared_ptr<const Environment> {
                    SynthConfig c = config;
                    c.seed = world_seed;
                    return std::make_shared<const SynthEnvironment>(c, fraction, jobs);
                },
                per_seed};
        }
        case EnvironmentKind::movielens: {
            if (!ratings) throw ArgumentError("Movielens sweeps need the ratings data");
            MovielensConfig config = spec.movielens;
            if (param == SweepParam::beta) config.beta = value;
            if (param == SweepParam::epsilon) config.target_epsilon = value;
            if (param == SweepParam::embed_dim) config.rank = static_cast<std::size_t>(value);
            return EnvironmentBuilder{
                [config, fraction, ratings](std::uint64_t world_seed) -> std::shared_ptr<const Environment> {
                    MovielensConfig c = config;
                    c.seed = world_seed;
                    auto world = std::make_shared<const MovielensWorld>(build_movielens_world(*ratings, c));
                    return std::make_shared<const MovielensEnvironment>(std::move(world), fraction);
                },
                false};
        }
    }
    throw ArgumentError("unknown environment");
}

namespace {

ActionSpace sweep_action_space(const SweepSpec& spec, SweepParam param, double value,
                               const std::shared_ptr<const RatingsMatrix>& ratings) {
    std::size_t n = 0;
    switch (spec.environment) {
        case EnvironmentKind::toy: return ActionSpace{4, 3};
        case EnvironmentKind::synthetic:
            n = param == SweepParam::n_actions ? static_cast<std::size_t>(value) : spec.synth.n_actions;
            break;
        case EnvironmentKind::movielens: n = ratings ? ratings->n_items : 0; break;
    }
    return ActionSpace{n, max_tree_depth(n)};
}

std::string format_number(double v) {
    if (std::isnan(v)) return {};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string format_tau(const std::optional<double>& tau) { return tau ? format_number(*tau) : "none"; }

}  // namespace

void write_csv_header(std::ostream& out) { out << kCsvHeader << '\n'; }

void write_csv_row(std::ostream& out, const SweepRow& row) {
    const TrialResult& r = row.result;
    out << row.experiment << ',' << row.sweep_param << ',' << format_number(row.sweep_value) << ','
        << row.estimator.name() << ',';
    out << (row.estimator.convolution ? std::string(to_string(*row.estimator.convolution)) : std::string()) << ',';
    if (row.estimator.is_pc() && r.tau) {
        out << format_tau(r.tau->target) << ',' << format_tau(r.tau->logging) << ',';
    } else {
        out << ",,";
    }
    out << r.n_seeds << ',';
    if (r.failed) {
        out << ",,,,,,";
    } else {
        out << format_number(r.true_value) << ',' << format_number(r.mse) << ',' << format_number(r.bias_sq) << ','
            << format_number(r.variance) << ',' << format_number(r.ci_low) << ',' << format_number(r.ci_high) << ',';
    }
    out << r.failures << '\n';
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, std::ostream& out,
                                const std::function<void(const SweepRow&)>& on_row) {
    spec.validate();
    std::shared_ptr<const RatingsMatrix> ratings;
    if (spec.environment == EnvironmentKind::movielens) {
        ratings = std::make_shared<const RatingsMatrix>(load_movielens(spec.movielens_data));
    }

    std::vector<double> values = spec.grid;
    if (spec.param == SweepParam::none) values = {std::numeric_limits<double>::quiet_NaN()};

    write_csv_header(out);
    std::vector<SweepRow> rows;
    for (double value : values) {
        const EnvironmentBuilder builder = make_builder(spec, spec.param, value, ratings);
        ReplicationOptions options;
        options.n_logged = spec.param == SweepParam::n_logged ? static_cast<std::size_t>(value) : spec.n_logged;
        options.ridge_lambda = spec.ridge_lambda;
        options.convolution = spec.convolution;
        options.seed = spec.seed;
        options.jobs = spec.jobs;
        const ActionSpace space = sweep_action_space(spec, spec.param, value, ratings);

        // candidate pairs per estimator
        std::vector<std::vector<TauPair>> candidates(spec.estimators.size());
        for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
            const auto& est = spec.estimators[e];
            if (!est.is_pc()) continue;
            if (spec.param == SweepParam::tau) {
                const TauPair pair = pair_for_value(value, spec.convolution.constraint);
                check_tau(*est.convolution, value, space, resolved_tree_depth(space, spec.convolution));
                candidates[e] = {pair};
            } else {
                candidates[e] = candidate_pairs(*est.convolution, space, spec.convolution);
            }
        }

        // validation for estimators with a real choice
        std::vector<CellRequest> validation_requests;
        std::vector<std::size_t> validation_owner;
        for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
            if (candidates[e].size() > 1) {
                validation_requests.push_back({spec.estimators[e], candidates[e]});
                validation_owner.push_back(e);
            }
        }
        std::vector<std::optional<TauPair>> chosen(spec.estimators.size());
        std::vector<bool> selection_failed(spec.estimators.size(), false);
        for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
            if (candidates[e].size() == 1) chosen[e] = candidates[e][0];
        }
        if (!validation_requests.empty()) {
            const CellEstimates validation = run_cell(builder, validation_requests, spec.n_validation_seeds,
                                                      SeedStream::validation, options);
            for (std::size_t v = 0; v < validation_requests.size(); ++v) {
                const std::size_t e = validation_owner[v];
                try {
                    chosen[e] = select_from_validation(candidates[e], validation.values[v], validation.true_values).pair;
                } catch (const EstimationError&) {
                    selection_failed[e] = true;
                }
            }
        }

        std::vector<CellRequest> requests;
        std::vector<std::size_t> owner;
        for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
            if (selection_failed[e]) continue;
            CellRequest req{spec.estimators[e], {}};
            if (spec.estimators[e].is_pc()) req.pairs = {*chosen[e]};
            requests.push_back(std::move(req));
            owner.push_back(e);
        }
        CellEstimates evaluation;
        if (!requests.empty()) {
            evaluation = run_cell(builder, requests, spec.n_seeds, SeedStream::evaluation, options);
        }

        std::vector<TrialResult> results(spec.estimators.size());
        for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
            if (selection_failed[e]) {
                results[e].n_seeds = spec.n_seeds;
                results[e].failures = spec.n_seeds;
                results[e].failed = true;
            }
        }
        for (std::size_t r = 0; r < requests.size(); ++r) {
            const std::size_t e = owner[r];
            results[e] = summarize_series(evaluation.values[r][0], evaluation.true_values);
            if (spec.estimators[e].is_pc()) results[e].tau = chosen[e];
        }

        for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
            SweepRow row{spec.experiment, std::string(to_string(spec.param)), value, spec.estimators[e],
                         std::move(results[e])};
            write_csv_row(out, row);
            out.flush();
            if (!out) throw IoError("failed writing results");
            if (on_row) on_row(row);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const std::filesystem::path& path,
                                const std::function<void(const SweepRow&)>& on_row) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open output file " + path.string());
    return run_sweep(spec, out, on_row);
}

SweepSpec toy_spec(std::size_t n_seeds, std::size_t n_logged) {
    SweepSpec spec;
    spec.experiment = "toy";
    spec.environment = EnvironmentKind::toy;
    spec.param = SweepParam::tau;
    spec.grid = {1.0, 2.0, 3.0};
    spec.estimators = {parse_estimator_spec("pc-ips-tree")};
    spec.n_seeds = n_seeds;
    spec.n_logged = n_logged;
    spec.convolution.constraint = TauConstraint::equal;
    return spec;
}

}  // namespace opelab
