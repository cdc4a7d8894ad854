#include "support.hpp"

#include "opelab/errors.hpp"
#include "opelab/estimators.hpp"
#include "opelab/synth_env.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

using namespace opelab;

namespace {

SynthConfig small_config(std::size_t n_actions, std::uint64_t seed) {
    SynthConfig c;
    c.n_actions = n_actions;
    c.n_topics = std::min<std::size_t>(8, n_actions);
    c.d_context = 6;
    c.d_embed = 4;
    c.d_noise = 3;
    c.hidden_width = 16;
    c.noise_draws = 16;
    c.n_test = 2000;
    c.seed = seed;
    return c;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Vector network_input(const SynthWorld& world, const Context& x, std::size_t a, const Vector& noise) {
    const auto& c = world.config();
    Vector in(static_cast<Eigen::Index>(c.d_context + c.d_embed + c.d_noise));
    in << x.features, world.embeddings()->row(a).transpose(), noise;
    return in;
}

}  // namespace

TEST_CASE("world shapes and determinism") {
    SynthConfig c;
    c.n_actions = 64;
    c.n_topics = 32;
    c.n_test = 10;
    c.seed = 5;
    const auto a = build_world(c);
    const auto b = build_world(c);
    CHECK(a->embeddings()->n_actions() == 64);
    CHECK(a->embeddings()->dim() == 16);
    CHECK(a->topic_means().rows() == 32);
    CHECK(a->topic_scales().minCoeff() >= 0.0);
    CHECK(a->embeddings()->matrix() == b->embeddings()->matrix());
    CHECK(a->topic_of() == b->topic_of());
    CHECK(a->noise_draws() == b->noise_draws());
    c.seed = 6;
    CHECK(build_world(c)->embeddings()->matrix() != a->embeddings()->matrix());
}

TEST_CASE("config validation") {
    SynthConfig c;
    c.n_topics = c.n_actions + 1;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    c = SynthConfig{};
    c.epsilon = 1.5;
    CHECK_THROWS_AS(build_world(c), ArgumentError);
    c = SynthConfig{};
    c.n_actions = 0;
    CHECK_THROWS_AS(c.validate(), ArgumentError);
    CHECK_NOTHROW(SynthConfig{}.validate());
}

TEST_CASE("actions cluster by topic") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SynthConfig c;
        c.n_test = 10;
        c.seed = seed;
        const auto world = build_world(c);
        const auto& emb = *world->embeddings();
        const auto& topic = world->topic_of();
        std::map<std::size_t, std::vector<std::size_t>> members;
        for (std::size_t a = 0; a < c.n_actions; ++a) members[topic[a]].push_back(a);
        // per-topic means over a bounded number of members
        double within_sum = 0.0, across_sum = 0.0;
        std::size_t topics = 0;
        for (const auto& [t, list] : members) {
            if (list.size() < 2) continue;
            const std::size_t m = std::min<std::size_t>(list.size(), 30);
            double within = 0.0, across = 0.0;
            std::size_t nw = 0, na = 0;
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = i + 1; j < m; ++j, ++nw) within += emb.squared_distance(list[i], list[j]);
                for (std::size_t k = 0; k < 30; ++k) {
                    const std::size_t other = (list[i] * 7919 + k * 104729) % c.n_actions;
                    if (topic[other] == t) continue;
                    across += emb.squared_distance(list[i], other);
                    ++na;
                }
            }
            within_sum += within / static_cast<double>(nw);
            across_sum += across / static_cast<double>(na);
            ++topics;
        }
        CHECK(within_sum / static_cast<double>(topics) < across_sum / static_cast<double>(topics));
    }
}

TEST_CASE("expected rewards: range, determinism and the direct network path") {
    const auto world = build_world(small_config(20, 3));
    Rng rng = make_rng(1, "ctx");
    const auto contexts = world->sample_contexts(20, rng);
    for (const auto& x : contexts) {
        const Vector row = world->reward_row(x);
        CHECK(row.minCoeff() > 0.0);
        CHECK(row.maxCoeff() < 1.0);
        CHECK(row == world->reward_row(x));
        for (std::size_t a = 0; a < 20; a += 7) {
            CHECK(world->expected_reward(a, x) == doctest::Approx(row[static_cast<Eigen::Index>(a)]).epsilon(1e-6));
            double direct = 0.0;
            const auto& noise = world->noise_draws();
            for (Eigen::Index m = 0; m < noise.rows(); ++m)
                direct += sigmoid(world->network_output(network_input(*world, x, a, noise.row(m).transpose())));
            CHECK(row[static_cast<Eigen::Index>(a)] == doctest::Approx(direct / static_cast<double>(noise.rows())).epsilon(1e-5));
        }
    }

    auto c = small_config(20, 3);
    c.d_noise = 0;
    const auto single = build_world(c);
    CHECK(single->noise_draws().rows() == 1);
    for (const auto& x : single->sample_contexts(10, rng))
        for (std::size_t a = 0; a < 20; ++a)
            CHECK(single->expected_reward(a, x) ==
                  doctest::Approx(sigmoid(single->network_output(network_input(*single, x, a, Vector(0))))).epsilon(1e-5));
}

TEST_CASE("softmax logging policy") {
    const auto world = build_world(small_config(10, 4));
    Rng rng = make_rng(2, "ctx");
    const auto contexts = world->sample_contexts(50, rng);
    const auto uniform = logging_policy(world, 0.0);
    for (const auto& x : contexts) CHECK((uniform->prob_row(x).array() - 0.1).abs().maxCoeff() < 1e-15);
    for (double beta : {-3.0, 3.0}) {
        const auto mu = logging_policy(world, beta);
        for (const auto& x : contexts) {
            const Vector row = mu->prob_row(x);
            CHECK(row.sum() == doctest::Approx(1.0).epsilon(1e-12));
            CHECK_NOTHROW(check_probability_row({row.data(), 10}));
        }
    }
    for (const auto& x : contexts) {
        Eigen::Index best = 0;
        world->reward_row(x).maxCoeff(&best);
        double previous = 0.0;
        for (double beta : {0.0, 3.0, 50.0, 500.0, 1e6}) {
            const Vector row = logging_policy(world, beta)->prob_row(x);
            CHECK(row[best] == doctest::Approx(row.maxCoeff()));
            CHECK(row[best] >= previous);
            previous = row[best];
        }
        CHECK(previous > 0.9);
    }
    RowMatrix spaced(1, 10);
    for (Eigen::Index a = 0; a < 10; ++a) spaced(0, a) = 0.05 * static_cast<double>((a * 3) % 10);
    const SoftmaxPolicy sharp(std::make_shared<const TabularRewardOracle>(spaced), 500.0);
    CHECK(sharp.prob_row(tabular_context(0, 1))[3] > 0.9);
}

TEST_CASE("epsilon-greedy target policy") {
    const auto world = build_world(small_config(12, 5));
    Rng rng = make_rng(3, "ctx");
    for (const auto& x : world->sample_contexts(20, rng)) {
        Eigen::Index best = 0;
        world->reward_row(x).maxCoeff(&best);
        const Vector greedy = target_policy(world, 0.0)->prob_row(x);
        CHECK(greedy[best] == 1.0);
        CHECK(greedy.sum() == 1.0);
        CHECK((target_policy(world, 1.0)->prob_row(x).array() - 1.0 / 12.0).abs().maxCoeff() < 1e-15);
        for (double eps : {0.05, 0.3, 0.8}) CHECK(target_policy(world, eps)->prob_row(x).sum() == doctest::Approx(1.0).epsilon(1e-14));
    }
    const auto tied = std::make_shared<const TabularRewardOracle>(RowMatrix::Constant(1, 4, 0.5));
    const EpsilonGreedyPolicy tie_policy(tied, 0.0);
    CHECK(tie_policy.prob_row(tabular_context(0, 1))[0] == 1.0);
}

TEST_CASE("policy values are monotone in temperature and greediness") {
    const auto world = build_world(small_config(40, 6));
    Rng rng = make_rng(4, "test-contexts");
    const auto contexts = world->sample_contexts(2000, rng);
    double previous = -1.0;
    for (double beta : {-3.0, -1.0, 0.0, 1.0, 3.0}) {
        const double v = true_value(*logging_policy(world, beta), *world, contexts);
        CHECK(v >= previous);
        previous = v;
    }
    previous = 2.0;
    for (double eps : {0.0, 0.05, 0.3, 0.8, 1.0}) {
        const double v = true_value(*target_policy(world, eps), *world, contexts);
        CHECK(v <= previous);
        previous = v;
    }
}

TEST_CASE("dataset generation") {
    auto c = small_config(16, 7);
    const auto world = build_world(c);
    const auto mu = logging_policy(world, 0.0);

    const auto d = generate_dataset(*world, mu, 1000, 11);
    CHECK(d.size() == 1000);
    std::vector<double> counts(16, 0.0);
    for (const auto& it : d.interactions()) counts[it.action] += 1.0;
    double chi2 = 0.0;
    for (double n : counts) chi2 += (n - 62.5) * (n - 62.5) / 62.5;
    CHECK(chi2 < 37.70);  // chi-square(15) upper 0.001 quantile
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.propensities()[i] == doctest::Approx(1.0 / 16.0));

    const auto again = generate_dataset(*world, mu, 1000, 11);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(d[i].action == again[i].action);
        CHECK(d[i].reward == again[i].reward);
        CHECK(d[i].context.features == again[i].context.features);
    }
    const auto with_target = generate_dataset_with_target(*world, mu, *target_policy(world, 0.05), 1000, 11);
    CHECK(with_target.dataset[17].reward == d[17].reward);
    CHECK(with_target.target.size() == 1000);

    const std::size_t n = 20000;
    const auto big = generate_dataset(*world, mu, n, 12);
    double mean = 0.0, ss = 0.0;
    for (const auto& it : big.interactions()) mean += it.reward;
    mean /= static_cast<double>(n);
    for (const auto& it : big.interactions()) ss += (it.reward - mean) * (it.reward - mean);
    const double se_logged = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    Rng rng = make_rng(13, "test-contexts");
    const auto contexts = world->sample_contexts(n, rng);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = world->reward_row(contexts[i]).mean();
    double v = 0.0, vs = 0.0;
    for (double x : values) v += x;
    v /= static_cast<double>(n);
    for (double x : values) vs += (x - v) * (x - v);
    const double se_value = std::sqrt(vs / static_cast<double>(n - 1) / static_cast<double>(n));
    CHECK(std::abs(mean - v) < 3.0 * std::hypot(se_logged, se_value));
}

TEST_CASE("deficient support masking") {
    const auto uniform4 = std::make_shared<const UniformPolicy>(4);
    CHECK(apply_deficient_support(uniform4, 0.0, 1) == uniform4);
    const auto half = apply_deficient_support(uniform4, 0.5, 1);
    const Vector row = half->prob_row(tabular_context(0, 1));
    std::vector<double> sorted(row.data(), row.data() + 4);
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<double>{0.0, 0.0, 0.5, 0.5});
    CHECK(apply_deficient_support(uniform4, 0.5, 1)->prob_row(tabular_context(0, 1)) == row);
    CHECK_THROWS_AS(apply_deficient_support(uniform4, 1.0, 1), ArgumentError);
    CHECK_THROWS_AS(apply_deficient_support(uniform4, -0.1, 1), ArgumentError);

    const auto world = build_world(small_config(30, 8));
    Rng rng = make_rng(5, "ctx");
    for (double f : {0.1, 0.37, 0.9}) {
        const auto masked = apply_deficient_support(logging_policy(world, 3.0), f, 2);
        const auto& m = dynamic_cast<const SupportMaskedPolicy&>(*masked).masked();
        CHECK(static_cast<std::size_t>(std::count(m.begin(), m.end(), true)) ==
              static_cast<std::size_t>(std::ceil(f * 30.0 - 1e-9)));
        for (const auto& x : world->sample_contexts(10, rng)) {
            const Vector r = masked->prob_row(x);
            CHECK(r.sum() == doctest::Approx(1.0).epsilon(1e-12));
            for (std::size_t a = 0; a < 30; ++a)
                if (m[a]) CHECK(r[static_cast<Eigen::Index>(a)] == 0.0);
        }
    }
}

TEST_CASE("masked logging biases IPS by the blind-spot mass") {
    const auto t = testing::random_instance(4, 9, 77);
    const auto masked = apply_deficient_support(t.logging, 0.34, 3);
    const auto& blind = dynamic_cast<const SupportMaskedPolicy&>(*masked).masked();
    double expectation = 0.0, blind_mass = 0.0;
    for (std::size_t x = 0; x < 4; ++x) {
        const Vector mu = masked->prob_row(t.contexts[x]);
        for (std::size_t a = 0; a < 9; ++a) {
            const auto xi = static_cast<Eigen::Index>(x), ai = static_cast<Eigen::Index>(a);
            if (blind[a]) blind_mass += 0.25 * t.pi(xi, ai) * t.delta(xi, ai);
            if (mu[ai] == 0.0) continue;
            LoggedInteraction it{t.contexts[x], a, t.delta(xi, ai)};
            const BanditDataset one({it}, masked, t.embeddings);
            expectation += 0.25 * mu[ai] * estimate_ips(one, *t.target).value;
        }
    }
    const double truth = true_value(*t.target, *t.oracle, t.contexts);
    CHECK(blind_mass > 0.0);
    CHECK(std::abs((truth - expectation) - blind_mass) < 1e-9);
}
