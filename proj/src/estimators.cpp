#include "opelab/estimators.hpp"

#include "opelab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace opelab {

std::string_view to_string(Backbone backbone) {
    switch (backbone) {
        case Backbone::dm: return "dm";
        case Backbone::ips: return "ips";
        case Backbone::snips: return "snips";
        case Backbone::dr: return "dr";
        case Backbone::sndr: return "sndr";
    }
    return "?";
}

Backbone parse_backbone(std::string_view text) {
    if (text == "dm") return Backbone::dm;
    if (text == "ips") return Backbone::ips;
    if (text == "snips") return Backbone::snips;
    if (text == "dr") return Backbone::dr;
    if (text == "sndr") return Backbone::sndr;
    throw ArgumentError("unknown estimator backbone '" + std::string(text) + "'");
}

bool needs_reward_model(Backbone backbone) {
    return backbone == Backbone::dm || backbone == Backbone::dr || backbone == Backbone::sndr;
}

// ---------------------------------------------------------------------------
// Reward model

RidgeRewardModel::RidgeRewardModel(Vector weights, double lambda, std::size_t context_dim, bool intercept,
                                   std::shared_ptr<const EmbeddingTable> embeddings)
    : weights_(std::move(weights)),
      lambda_(lambda),
      context_dim_(context_dim),
      intercept_(intercept),
      embeddings_(std::move(embeddings)) {
    const auto expected = static_cast<Eigen::Index>(context_dim_ + embeddings_->dim() + (intercept_ ? 1 : 0));
    if (weights_.size() != expected) throw ArgumentError("ridge weight vector has the wrong length");
}

double RidgeRewardModel::expected_reward(std::size_t action, const Context& context) const {
    const auto dx = static_cast<Eigen::Index>(context_dim_);
    const auto de = static_cast<Eigen::Index>(embeddings_->dim());
    double out = weights_.head(dx).dot(context.features) + embeddings_->row(action).dot(weights_.segment(dx, de));
    if (intercept_) out += weights_[dx + de];
    return out;
}

Vector RidgeRewardModel::reward_row(const Context& context) const {
    const auto dx = static_cast<Eigen::Index>(context_dim_);
    const auto de = static_cast<Eigen::Index>(embeddings_->dim());
    double shared = weights_.head(dx).dot(context.features);
    if (intercept_) shared += weights_[dx + de];
    Vector out = embeddings_->matrix() * weights_.segment(dx, de);
    out.array() += shared;
    return out;
}

RidgeRewardModel fit_reward_model(const BanditDataset& dataset, double lambda, bool fit_intercept) {
    if (dataset.empty()) throw ArgumentError("cannot fit a reward model on an empty dataset");
    if (!(lambda > 0.0)) throw ArgumentError("ridge lambda must be positive");

    const auto dx = dataset[0].context.features.size();
    const auto de = static_cast<Eigen::Index>(dataset.embeddings().dim());
    const Eigen::Index p = dx + de + (fit_intercept ? 1 : 0);

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Vector rhs = Vector::Zero(p);
    Vector phi(p);
    for (const auto& it : dataset.interactions()) {
        if (it.context.features.size() != dx) throw ArgumentError("contexts of differing dimension in one dataset");
        phi.head(dx) = it.context.features;
        phi.segment(dx, de) = dataset.embeddings().row(it.action).transpose();
        if (fit_intercept) phi[p - 1] = 1.0;
        gram.selfadjointView<Eigen::Lower>().rankUpdate(phi);
        rhs += it.reward * phi;
    }
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
    for (Eigen::Index j = 0; j < dx + de; ++j) gram(j, j) += lambda;

    Eigen::LDLT<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw EstimationError("ridge normal equations could not be factorized");
    Vector w = solver.solve(rhs);
    return RidgeRewardModel(std::move(w), lambda, static_cast<std::size_t>(dx), fit_intercept,
                            dataset.embeddings_ptr());
}

// ---------------------------------------------------------------------------
// Shared machinery

void EstimatorConfig::validate() const {
    if (needs_reward_model(backbone) && !reward_model) {
        throw ArgumentError(std::string(to_string(backbone)) + " requires a reward model");
    }
    if (backbone == Backbone::dm && is_pc()) throw ArgumentError("policy convolution needs an importance-weighted backbone");
}

DirectTerms direct_terms(const BanditDataset& dataset, const PolicyTable& target, const RewardOracle& model) {
    if (target.size() != dataset.size()) throw ArgumentError("target table does not match the dataset");
    DirectTerms out;
    out.baseline.resize(dataset.size());
    out.logged_prediction.resize(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const Vector predicted = model.reward_row(dataset[i].context);
        const auto row = target.row(i);
        out.baseline[i] = Eigen::Map<const Vector>(row.data(), static_cast<Eigen::Index>(row.size())).dot(predicted);
        out.logged_prediction[i] = predicted[static_cast<Eigen::Index>(dataset[i].action)];
    }
    return out;
}

std::vector<double> convolved_propensities(const BanditDataset& dataset, const PolicyTable& rows,
                                           const SimilarityOperator* op) {
    if (rows.size() != dataset.size()) throw ArgumentError("policy table does not match the dataset");
    std::vector<double> out(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const std::size_t a = dataset[i].action;
        out[i] = op == nullptr ? rows.at(i, a) : op->convolve(rows.row(i), a);
    }
    return out;
}

EstimateDiagnostics estimate_weighted(Backbone backbone, const BanditDataset& dataset,
                                      std::span<const double> target_propensity,
                                      std::span<const double> logging_propensity, const DirectTerms* direct) {
    const std::size_t n = dataset.size();
    if (n == 0) throw EstimationError("cannot estimate from an empty dataset");
    if (target_propensity.size() != n || logging_propensity.size() != n) {
        throw ArgumentError("propensity vectors do not match the dataset");
    }
    if (backbone == Backbone::dm) throw ArgumentError("the direct method does not use importance weights");
    const bool model_based = backbone == Backbone::dr || backbone == Backbone::sndr;
    if (model_based && direct == nullptr) throw ArgumentError(std::string(to_string(backbone)) + " requires a reward model");

    EstimateDiagnostics out;
    std::vector<double> w(n);
    double weight_sum = 0.0;
    out.min_weight = std::numeric_limits<double>::infinity();
    out.max_weight = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (!(logging_propensity[i] > 0.0)) {
            throw EstimationError("logging propensity at sample " + std::to_string(i) + " is not positive", i);
        }
        w[i] = target_propensity[i] / logging_propensity[i];
        weight_sum += w[i];
        out.min_weight = std::min(out.min_weight, w[i]);
        out.max_weight = std::max(out.max_weight, w[i]);
    }

    double scale = 1.0;  // 1/rho for the self-normalized backbones
    if (backbone == Backbone::snips || backbone == Backbone::sndr) {
        if (!(weight_sum > 0.0)) {
            throw EstimationError("importance weights sum to zero: the target puts no mass on any logged action");
        }
        out.rho = weight_sum / static_cast<double>(n);
        scale = 1.0 / *out.rho;
    }

    out.per_sample_terms.resize(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = dataset[i].reward;
        double term = 0.0;
        switch (backbone) {
            case Backbone::ips: term = w[i] * r; break;
            case Backbone::snips: term = (w[i] * scale) * r; break;
            case Backbone::dr: term = w[i] * (r - direct->logged_prediction[i]) + direct->baseline[i]; break;
            case Backbone::sndr:
                term = (w[i] * scale) * (r - direct->logged_prediction[i]) + direct->baseline[i];
                break;
            case Backbone::dm: break;
        }
        out.per_sample_terms[i] = term;
        total += term;
    }
    out.value = total / static_cast<double>(n);
    return out;
}

// ---------------------------------------------------------------------------
// Estimators

EstimateDiagnostics estimate_dm(const BanditDataset& dataset, const PolicyTable& target, const RewardOracle& model) {
    if (dataset.empty()) throw EstimationError("cannot estimate from an empty dataset");
    const DirectTerms direct = direct_terms(dataset, target, model);
    EstimateDiagnostics out;
    out.per_sample_terms = direct.baseline;
    double total = 0.0;
    for (double t : out.per_sample_terms) total += t;
    out.value = total / static_cast<double>(dataset.size());
    out.min_weight = out.max_weight = 0.0;
    return out;
}

namespace {

EstimateDiagnostics estimate_plain(Backbone backbone, const BanditDataset& dataset, const PolicyTable& target,
                                   const RewardOracle* model) {
    const auto tp = convolved_propensities(dataset, target, nullptr);
    if (model == nullptr) return estimate_weighted(backbone, dataset, tp, dataset.propensities(), nullptr);
    const DirectTerms direct = direct_terms(dataset, target, *model);
    return estimate_weighted(backbone, dataset, tp, dataset.propensities(), &direct);
}

}  // namespace

EstimateDiagnostics estimate_ips(const BanditDataset& dataset, const PolicyTable& target) {
    return estimate_plain(Backbone::ips, dataset, target, nullptr);
}

EstimateDiagnostics estimate_snips(const BanditDataset& dataset, const PolicyTable& target) {
    return estimate_plain(Backbone::snips, dataset, target, nullptr);
}

EstimateDiagnostics estimate_dr(const BanditDataset& dataset, const PolicyTable& target, const RewardOracle& model) {
    return estimate_plain(Backbone::dr, dataset, target, &model);
}

EstimateDiagnostics estimate_sndr(const BanditDataset& dataset, const PolicyTable& target, const RewardOracle& model) {
    return estimate_plain(Backbone::sndr, dataset, target, &model);
}

EstimateDiagnostics estimate_pc(const EstimatorConfig& config, const BanditDataset& dataset, const PolicyTable& target) {
    config.validate();
    if (config.backbone == Backbone::dm) throw ArgumentError("policy convolution needs an importance-weighted backbone");
    const SimilarityOperator* tconv = config.target_conv ? &*config.target_conv : nullptr;
    const SimilarityOperator* lconv = config.logging_conv ? &*config.logging_conv : nullptr;
    for (const auto* op : {tconv, lconv}) {
        if (op != nullptr && op->n_actions() != dataset.n_actions()) {
            throw ArgumentError("convolution operator and dataset disagree on the action count");
        }
    }

    const auto numer = convolved_propensities(dataset, target, tconv);
    const auto denom = convolved_propensities(dataset, dataset.logging_rows(), lconv);
    for (std::size_t i = 0; i < denom.size(); ++i) {
        if (!(denom[i] > 0.0)) {
            throw EstimationError("convolved logging propensity at sample " + std::to_string(i) +
                                      " is not positive; the convolution does not cover this blind spot",
                                  i);
        }
    }
    if (needs_reward_model(config.backbone)) {
        const DirectTerms direct = direct_terms(dataset, target, *config.reward_model);
        return estimate_weighted(config.backbone, dataset, numer, denom, &direct);
    }
    return estimate_weighted(config.backbone, dataset, numer, denom, nullptr);
}

EstimateDiagnostics estimate(const EstimatorConfig& config, const BanditDataset& dataset, const PolicyTable& target) {
    config.validate();
    if (config.is_pc()) return estimate_pc(config, dataset, target);
    switch (config.backbone) {
        case Backbone::dm: return estimate_dm(dataset, target, *config.reward_model);
        case Backbone::ips: return estimate_ips(dataset, target);
        case Backbone::snips: return estimate_snips(dataset, target);
        case Backbone::dr: return estimate_dr(dataset, target, *config.reward_model);
        case Backbone::sndr: return estimate_sndr(dataset, target, *config.reward_model);
    }
    throw ArgumentError("unknown backbone");
}

EstimateDiagnostics estimate_dm(const BanditDataset& dataset, const PolicyEvaluator& target, const RewardOracle& model) {
    return estimate_dm(dataset, tabulate(target, dataset.contexts()), model);
}

EstimateDiagnostics estimate_ips(const BanditDataset& dataset, const PolicyEvaluator& target) {
    return estimate_ips(dataset, tabulate(target, dataset.contexts()));
}

EstimateDiagnostics estimate_snips(const BanditDataset& dataset, const PolicyEvaluator& target) {
    return estimate_snips(dataset, tabulate(target, dataset.contexts()));
}

EstimateDiagnostics estimate_dr(const BanditDataset& dataset, const PolicyEvaluator& target, const RewardOracle& model) {
    return estimate_dr(dataset, tabulate(target, dataset.contexts()), model);
}

EstimateDiagnostics estimate_sndr(const BanditDataset& dataset, const PolicyEvaluator& target, const RewardOracle& model) {
    return estimate_sndr(dataset, tabulate(target, dataset.contexts()), model);
}

EstimateDiagnostics estimate_pc(const EstimatorConfig& config, const BanditDataset& dataset,
                                const PolicyEvaluator& target) {
    return estimate_pc(config, dataset, tabulate(target, dataset.contexts()));
}

}  // namespace opelab
