#include "opelab/synth_env.hpp"

#include "opelab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace opelab {

void SynthConfig::validate() const {
    if (n_actions == 0) throw ArgumentError("n_actions must be positive");
    if (n_topics == 0 || n_topics > n_actions) throw ArgumentError("n_topics must be in [1, n_actions]");
    if (d_context == 0 || d_embed == 0) throw ArgumentError("context and embedding dimensions must be positive");
    if (hidden_width == 0) throw ArgumentError("hidden_width must be positive");
    if (noise_draws == 0) throw ArgumentError("noise_draws must be positive");
    if (!std::isfinite(beta)) throw ArgumentError("beta must be finite");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ArgumentError("epsilon must be in [0, 1]");
    if (n_logged == 0) throw ArgumentError("n_logged must be positive");
    if (n_test == 0) throw ArgumentError("n_test must be positive");
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

SynthWorld::SynthWorld(const SynthConfig& config) : config_(config) {
    config_.validate();
    const auto n = static_cast<Eigen::Index>(config_.n_actions);
    const auto k = static_cast<Eigen::Index>(config_.n_topics);
    const auto dx = static_cast<Eigen::Index>(config_.d_context);
    const auto de = static_cast<Eigen::Index>(config_.d_embed);
    const auto dn = static_cast<Eigen::Index>(config_.d_noise);
    const auto h = static_cast<Eigen::Index>(config_.hidden_width);
    const auto draws = static_cast<Eigen::Index>(config_.d_noise == 0 ? 1 : config_.noise_draws);

    std::normal_distribution<double> normal(0.0, 1.0);

    Rng topic_rng = make_rng(config_.seed, "topics");
    topic_of_.resize(config_.n_actions);
    std::uniform_int_distribution<std::size_t> pick_topic(0, config_.n_topics - 1);
    for (auto& t : topic_of_) t = pick_topic(topic_rng);
    topic_means_.resize(k, de);
    topic_scales_.resize(k, de);
    for (Eigen::Index t = 0; t < k; ++t) {
        for (Eigen::Index j = 0; j < de; ++j) topic_means_(t, j) = normal(topic_rng);
        for (Eigen::Index j = 0; j < de; ++j) topic_scales_(t, j) = std::abs(normal(topic_rng));
    }

    Rng embed_rng = make_rng(config_.seed, "embeddings");
    RowMatrix emb(n, de);
    for (Eigen::Index a = 0; a < n; ++a) {
        const auto t = static_cast<Eigen::Index>(topic_of_[static_cast<std::size_t>(a)]);
        for (Eigen::Index j = 0; j < de; ++j) emb(a, j) = topic_means_(t, j) + topic_scales_(t, j) * normal(embed_rng);
    }
    embeddings_ = std::make_shared<const EmbeddingTable>(std::move(emb));

    Rng net_rng = make_rng(config_.seed, "network");
    const Eigen::Index fan_in = dx + de + dn;
    std::normal_distribution<double> layer1(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    std::normal_distribution<double> layer2(0.0, 1.0 / std::sqrt(static_cast<double>(h)));
    w1_.resize(h, fan_in);
    for (Eigen::Index i = 0; i < h; ++i)
        for (Eigen::Index j = 0; j < fan_in; ++j) w1_(i, j) = layer1(net_rng);
    b1_ = Vector::Zero(h);
    w2_.resize(h);
    for (Eigen::Index i = 0; i < h; ++i) w2_[i] = layer2(net_rng);

    Rng noise_rng = make_rng(config_.seed, "oracle-noise");
    noise_ = RowMatrix::Zero(draws, dn);
    for (Eigen::Index m = 0; m < draws; ++m)
        for (Eigen::Index j = 0; j < dn; ++j) noise_(m, j) = normal(noise_rng);

    // split the first layer so each (action, draw) pair costs one tanh per hidden unit
    action_term_ = (w1_.middleCols(dx, de) * embeddings_->matrix().transpose()).cast<float>();
    Eigen::MatrixXd noise_term = w1_.rightCols(dn) * noise_.transpose();
    noise_term.colwise() += b1_;
    noise_term_ = noise_term.cast<float>();
    w2f_ = w2_.cast<float>();
}

std::shared_ptr<const SynthWorld> build_world(const SynthConfig& config) {
    return std::make_shared<const SynthWorld>(config);
}

Eigen::VectorXf SynthWorld::hidden_context_term(const Context& context) const {
    if (context.features.size() != static_cast<Eigen::Index>(config_.d_context)) {
        throw ArgumentError("context has dimension " + std::to_string(context.features.size()) + ", expected " +
                            std::to_string(config_.d_context));
    }
    return (w1_.leftCols(static_cast<Eigen::Index>(config_.d_context)) * context.features).cast<float>();
}

void SynthWorld::rewards_from_hidden(const Eigen::VectorXf& context_term, std::size_t first, std::size_t count,
                                     double* out) const {
    const Eigen::Index draws = noise_term_.cols();
    const auto n = static_cast<Eigen::Index>(count);
    const auto a0 = static_cast<Eigen::Index>(first);
    // (draw, action) grid of pre-sigmoid outputs, one hidden unit at a time
    Eigen::ArrayXXf z = Eigen::ArrayXXf::Constant(draws, n, static_cast<float>(b2_));
    Eigen::ArrayXXf hidden(draws, n);
    for (Eigen::Index j = 0; j < noise_term_.rows(); ++j) {
        const float* noise = noise_term_.data() + j * draws;
        float* h = hidden.data();
        for (Eigen::Index a = 0; a < n; ++a, h += draws) {
            const float shift = context_term[j] + action_term_(j, a0 + a);
            for (Eigen::Index m = 0; m < draws; ++m) h[m] = noise[m] + shift;
        }
        hidden = hidden.tanh();
        z += w2f_[j] * hidden;
    }
    const Eigen::ArrayXXd p = 1.0 / (1.0 + (-z.cast<double>()).exp());
    const Eigen::ArrayXd mean = p.colwise().mean().transpose();
    std::copy(mean.data(), mean.data() + n, out);
}

double SynthWorld::expected_reward(std::size_t action, const Context& context) const {
    if (action >= config_.n_actions) throw ArgumentError("action " + std::to_string(action) + " out of range");
    double out = 0.0;
    rewards_from_hidden(hidden_context_term(context), action, 1, &out);
    return out;
}

Vector SynthWorld::reward_row(const Context& context) const {
    constexpr std::size_t block = 64;
    const Eigen::VectorXf ct = hidden_context_term(context);
    Vector out(static_cast<Eigen::Index>(config_.n_actions));
    for (std::size_t a = 0; a < config_.n_actions; a += block)
        rewards_from_hidden(ct, a, std::min(block, config_.n_actions - a), out.data() + a);
    return out;
}

double SynthWorld::network_output(const Vector& input) const {
    if (input.size() != w1_.cols()) throw ArgumentError("network input has the wrong dimension");
    const Vector hidden = (w1_ * input + b1_).array().tanh().matrix();
    return w2_.dot(hidden) + b2_;
}

double SynthWorld::sampled_reward(std::size_t action, const Context& context, Rng& rng) const {
    if (action >= config_.n_actions) throw ArgumentError("action " + std::to_string(action) + " out of range");
    std::uniform_int_distribution<Eigen::Index> pick(0, noise_term_.cols() - 1);
    const Eigen::Index m = pick(rng);
    const auto a = static_cast<Eigen::Index>(action);
    const Eigen::ArrayXf hidden =
        (hidden_context_term(context).array() + action_term_.col(a).array() + noise_term_.col(m).array()).tanh();
    const double z = static_cast<double>((w2f_.array() * hidden).sum()) + b2_;
    return sigmoid(z);
}

std::vector<Context> SynthWorld::sample_contexts(std::size_t n, Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Context> out(n);
    for (auto& c : out) {
        c.features.resize(static_cast<Eigen::Index>(config_.d_context));
        for (Eigen::Index j = 0; j < c.features.size(); ++j) c.features[j] = normal(rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Policies

SoftmaxPolicy::SoftmaxPolicy(std::shared_ptr<const RewardOracle> oracle, double beta)
    : oracle_(std::move(oracle)), beta_(beta) {
    if (!oracle_) throw ArgumentError("softmax policy needs an oracle");
    if (!std::isfinite(beta_)) throw ArgumentError("beta must be finite");
}

Vector SoftmaxPolicy::prob_row(const Context& context) const {
    return prob_row_from_rewards(oracle_->reward_row(context), context);
}

Vector SoftmaxPolicy::prob_row_from_rewards(const Vector& rewards, const Context&) const {
    Vector z = beta_ * rewards;
    z.array() -= z.maxCoeff();
    z = z.array().exp().matrix();
    return z / z.sum();
}

EpsilonGreedyPolicy::EpsilonGreedyPolicy(std::shared_ptr<const RewardOracle> oracle, double epsilon)
    : oracle_(std::move(oracle)), epsilon_(epsilon) {
    if (!oracle_) throw ArgumentError("epsilon-greedy policy needs an oracle");
    if (!(epsilon_ >= 0.0 && epsilon_ <= 1.0)) throw ArgumentError("epsilon must be in [0, 1]");
}

Vector EpsilonGreedyPolicy::prob_row(const Context& context) const {
    return prob_row_from_rewards(oracle_->reward_row(context), context);
}

Vector EpsilonGreedyPolicy::prob_row_from_rewards(const Vector& rewards, const Context&) const {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < rewards.size(); ++a) {
        if (rewards[a] > rewards[best]) best = a;
    }
    Vector row = Vector::Constant(rewards.size(), epsilon_ / static_cast<double>(rewards.size()));
    row[best] += 1.0 - epsilon_;
    return row;
}

SupportMaskedPolicy::SupportMaskedPolicy(std::shared_ptr<const PolicyEvaluator> inner, std::vector<bool> masked)
    : inner_(std::move(inner)), masked_(std::move(masked)) {
    if (!inner_) throw ArgumentError("masked policy needs an inner policy");
    if (masked_.size() != inner_->n_actions()) throw ArgumentError("mask length does not match the action count");
    if (std::all_of(masked_.begin(), masked_.end(), [](bool m) { return m; })) {
        throw ArgumentError("mask leaves no supported action");
    }
}

Vector SupportMaskedPolicy::mask(Vector row) const {
    for (Eigen::Index a = 0; a < row.size(); ++a) {
        if (masked_[static_cast<std::size_t>(a)]) row[a] = 0.0;
    }
    const double total = row.sum();
    if (!(total > 0.0)) throw DataIntegrityError("masked policy row has no remaining probability mass");
    return row / total;
}

Vector SupportMaskedPolicy::prob_row(const Context& context) const { return mask(inner_->prob_row(context)); }

Vector SupportMaskedPolicy::prob_row_from_rewards(const Vector& rewards, const Context& context) const {
    return mask(inner_->prob_row_from_rewards(rewards, context));
}

std::shared_ptr<const PolicyEvaluator> logging_policy(std::shared_ptr<const SynthWorld> world, double beta) {
    return std::make_shared<const SoftmaxPolicy>(std::move(world), beta);
}

std::shared_ptr<const PolicyEvaluator> target_policy(std::shared_ptr<const SynthWorld> world, double epsilon) {
    return std::make_shared<const EpsilonGreedyPolicy>(std::move(world), epsilon);
}

std::shared_ptr<const PolicyEvaluator> apply_deficient_support(std::shared_ptr<const PolicyEvaluator> logging,
                                                               double deficient_fraction, std::uint64_t seed) {
    if (!logging) throw ArgumentError("deficient support needs a policy");
    if (!(deficient_fraction >= 0.0 && deficient_fraction < 1.0)) {
        throw ArgumentError("deficient fraction must be in [0, 1)");
    }
    const std::size_t n = logging->n_actions();
    // the small slack keeps e.g. 0.3 * 10 from rounding up to 4
    const auto removed = static_cast<std::size_t>(std::ceil(deficient_fraction * static_cast<double>(n) - 1e-9));
    if (removed == 0) return logging;
    if (removed >= n) throw ArgumentError("deficient fraction leaves no supported action");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, "deficient-support");
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> masked(n, false);
    for (std::size_t i = 0; i < removed; ++i) masked[order[i]] = true;
    return std::make_shared<const SupportMaskedPolicy>(std::move(logging), std::move(masked));
}

// ---------------------------------------------------------------------------
// Logged data

LoggedData generate_dataset_with_target(const SynthWorld& world, std::shared_ptr<const PolicyEvaluator> logging,
                                        const PolicyEvaluator& target, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ArgumentError("dataset size must be at least 1");
    if (!logging || logging->n_actions() != world.n_actions()) {
        throw ArgumentError("logging policy does not match the world's action count");
    }

    Rng context_rng = make_rng(seed, "contexts");
    std::vector<Context> contexts = world.sample_contexts(n, context_rng);
    const PolicyEvaluator* policies[] = {logging.get(), &target};
    auto tables = tabulate(policies, contexts);

    Rng action_rng = make_rng(seed, "actions");
    Rng reward_rng = make_rng(seed, "rewards");
    std::vector<LoggedInteraction> interactions(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& it = interactions[i];
        it.action = sample_discrete(tables[0].row(i), action_rng);
        it.reward = world.sampled_reward(it.action, contexts[i], reward_rng);
        it.context = std::move(contexts[i]);
    }
    BanditDataset dataset(std::move(interactions), std::move(logging), world.embeddings(), std::move(tables[0]),
                          DatasetMeta{"synthetic", seed});
    return LoggedData{std::move(dataset), std::move(tables[1])};
}

BanditDataset generate_dataset(const SynthWorld& world, std::shared_ptr<const PolicyEvaluator> logging,
                               std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ArgumentError("dataset size must be at least 1");
    if (!logging || logging->n_actions() != world.n_actions()) {
        throw ArgumentError("logging policy does not match the world's action count");
    }
    Rng context_rng = make_rng(seed, "contexts");
    std::vector<Context> contexts = world.sample_contexts(n, context_rng);
    PolicyTable rows = tabulate(*logging, contexts);

    Rng action_rng = make_rng(seed, "actions");
    Rng reward_rng = make_rng(seed, "rewards");
    std::vector<LoggedInteraction> interactions(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& it = interactions[i];
        it.action = sample_discrete(rows.row(i), action_rng);
        it.reward = world.sampled_reward(it.action, contexts[i], reward_rng);
        it.context = std::move(contexts[i]);
    }
    return BanditDataset(std::move(interactions), std::move(logging), world.embeddings(), std::move(rows),
                         DatasetMeta{"synthetic", seed});
}

}  // namespace opelab
