#pragma once

#include "opelab/core.hpp"
#include "opelab/rng.hpp"
#include "opelab/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>
#include <random>
#include <unordered_set>
#include <vector>

namespace opelab::testing {

/// Finite instance: uniform context distribution, explicit policy and reward tables.
struct TabularInstance {
    std::size_t n_contexts = 0;
    std::size_t n_actions = 0;
    RowMatrix pi;
    RowMatrix mu;
    RowMatrix delta;
    std::vector<Context> contexts;
    std::shared_ptr<const TabularPolicy> target;
    std::shared_ptr<const TabularPolicy> logging;
    std::shared_ptr<const TabularRewardOracle> oracle;
    std::shared_ptr<const EmbeddingTable> embeddings;
};

inline RowMatrix random_rows(std::size_t rows, std::size_t cols, Rng& rng, double zero_probability = 0.0) {
    std::uniform_real_distribution<double> unit(0.05, 1.0);
    std::bernoulli_distribution zero(zero_probability);
    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = zero(rng) ? 0.0 : unit(rng);
        if (m.row(i).sum() == 0.0) m(i, 0) = 1.0;
        m.row(i) /= m.row(i).sum();
    }
    return m;
}

/// Random full-support logging policy; the target may have zeros.
inline TabularInstance random_instance(std::size_t n_contexts, std::size_t n_actions, std::uint64_t seed,
                                       std::size_t embed_dim = 2) {
    Rng rng = make_rng(seed, "test-instance");
    TabularInstance t;
    t.n_contexts = n_contexts;
    t.n_actions = n_actions;
    t.pi = random_rows(n_contexts, n_actions, rng, 0.3);
    t.mu = random_rows(n_contexts, n_actions, rng, 0.0);
    std::uniform_real_distribution<double> reward(0.0, 1.0);
    t.delta.resize(static_cast<Eigen::Index>(n_contexts), static_cast<Eigen::Index>(n_actions));
    for (Eigen::Index i = 0; i < t.delta.size(); ++i) t.delta.data()[i] = reward(rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    RowMatrix emb(static_cast<Eigen::Index>(n_actions), static_cast<Eigen::Index>(embed_dim));
    for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = normal(rng);
    for (std::size_t x = 0; x < n_contexts; ++x) t.contexts.push_back(tabular_context(x, n_contexts));
    t.target = std::make_shared<const TabularPolicy>(t.pi);
    t.logging = std::make_shared<const TabularPolicy>(t.mu);
    t.oracle = std::make_shared<const TabularRewardOracle>(t.delta);
    t.embeddings = std::make_shared<const EmbeddingTable>(std::move(emb));
    return t;
}

/// n interactions with uniform contexts, actions from mu and rewards delta(a, x) + `noise` * N(0, 1).
inline BanditDataset random_dataset(const TabularInstance& t, std::size_t n, std::uint64_t seed, double noise = 0.0) {
    Rng rng = make_rng(seed, "test-dataset");
    std::uniform_int_distribution<std::size_t> pick(0, t.n_contexts - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<LoggedInteraction> out(n);
    for (auto& it : out) {
        const std::size_t x = pick(rng);
        it.context = t.contexts[x];
        const auto row = t.mu.row(static_cast<Eigen::Index>(x));
        it.action = sample_discrete(std::span<const double>(row.data(), t.n_actions), rng);
        it.reward = t.delta(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(it.action)) + noise * normal(rng);
    }
    return BanditDataset(std::move(out), t.logging, t.embeddings, DatasetMeta{"test", seed});
}

/// Dataset holding the single interaction (x, a, delta(a, x)).
inline BanditDataset single_sample(const TabularInstance& t, std::size_t x, std::size_t a) {
    LoggedInteraction it{t.contexts[x], a, t.delta(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(a))};
    return BanditDataset({it}, t.logging, t.embeddings);
}

/// Four-action toy world: delta (5, 10, 15, 20), pi (0, .2, .2, .6), mu (.2, .2, .4, .2).
inline TabularInstance toy_instance() {
    TabularInstance t;
    t.n_contexts = 1;
    t.n_actions = 4;
    t.pi.resize(1, 4);
    t.pi << 0.0, 0.2, 0.2, 0.6;
    t.mu.resize(1, 4);
    t.mu << 0.2, 0.2, 0.4, 0.2;
    t.delta.resize(1, 4);
    t.delta << 5, 10, 15, 20;
    RowMatrix emb(4, 1);
    emb << 0, 1, 10, 11;
    t.contexts = {tabular_context(0, 1)};
    t.target = std::make_shared<const TabularPolicy>(t.pi);
    t.logging = std::make_shared<const TabularPolicy>(t.mu);
    t.oracle = std::make_shared<const TabularRewardOracle>(t.delta);
    t.embeddings = std::make_shared<const EmbeddingTable>(std::move(emb));
    return t;
}

/// Reward model that returns a fixed constant.
class ConstantModel final : public RewardOracle {
public:
    ConstantModel(std::size_t n_actions, double value) : n_(n_actions), value_(value) {}
    std::size_t n_actions() const override { return n_; }
    double expected_reward(std::size_t, const Context&) const override { return value_; }

private:
    std::size_t n_;
    double value_;
};

/// delta_hat(a, x) = w_x . x + w_e . E(a) + b.
class LinearModel final : public RewardOracle {
public:
    LinearModel(std::shared_ptr<const EmbeddingTable> embeddings, Vector wx, Vector we, double b)
        : embeddings_(std::move(embeddings)), wx_(std::move(wx)), we_(std::move(we)), b_(b) {}
    std::size_t n_actions() const override { return embeddings_->n_actions(); }
    double expected_reward(std::size_t a, const Context& x) const override {
        return wx_.dot(x.features) + we_.dot(embeddings_->row(a).transpose()) + b_;
    }

private:
    std::shared_ptr<const EmbeddingTable> embeddings_;
    Vector wx_;
    Vector we_;
    double b_;
};

/// Write `n_ratings` distinct ratings in the tab-separated u.data layout.
/// Every user rates at least `per_user` items, the last user and item ids
/// always occur, and ratings follow a rank-3 preference model.
inline void write_synthetic_ratings(std::ostream& out, std::size_t n_users, std::size_t n_items, std::size_t n_ratings,
                                    std::uint64_t seed, std::size_t per_user = 20) {
    Rng rng = make_rng(seed, "synthetic-ratings");
    std::normal_distribution<double> normal(0.0, 1.0);
    RowMatrix users(static_cast<Eigen::Index>(n_users), 3), items(static_cast<Eigen::Index>(n_items), 3);
    for (Eigen::Index i = 0; i < users.size(); ++i) users.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < items.size(); ++i) items.data()[i] = normal(rng);
    std::unordered_set<std::uint64_t> seen;
    auto emit = [&](std::size_t u, std::size_t i) {
        if (!seen.insert(static_cast<std::uint64_t>(u) * n_items + i).second) return;
        const double score = 3.2 + 0.8 * users.row(static_cast<Eigen::Index>(u)).dot(items.row(static_cast<Eigen::Index>(i))) +
                             0.7 * normal(rng);
        const int rating = static_cast<int>(std::clamp(std::lround(score), 1L, 5L));
        out << u + 1 << '\t' << i + 1 << '\t' << rating << '\t' << 874724710 + seen.size() << '\n';
    };
    std::uniform_int_distribution<std::size_t> pick_user(0, n_users - 1), pick_item(0, n_items - 1);
    emit(n_users - 1, n_items - 1);
    for (std::size_t u = 0; u < n_users; ++u)
        while (seen.size() < std::min(n_ratings, (u + 1) * per_user + 1)) emit(u, pick_item(rng));
    while (seen.size() < n_ratings) emit(pick_user(rng), pick_item(rng));
}

}  // namespace opelab::testing
