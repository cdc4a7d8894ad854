#include "support.hpp"

#include "opelab/errors.hpp"
#include "opelab/synth_env.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <numeric>

using namespace opelab;
using opelab::testing::random_instance;
using opelab::testing::toy_instance;

TEST_CASE("derived seeds are deterministic and separate streams") {
    CHECK(derive_seed(7, "data", 3) == derive_seed(7, "data", 3));
    CHECK(derive_seed(7, "data", 3) != derive_seed(7, "data", 4));
    CHECK(derive_seed(7, "data", 3) != derive_seed(7, "validation-data", 3));
    CHECK(derive_seed(7, "data", 3) != derive_seed(8, "data", 3));
}

TEST_CASE("sample_discrete skips zero weights and matches frequencies") {
    Rng rng = make_rng(1, "freq");
    const std::array<double, 5> weights{0.0, 0.1, 0.0, 0.6, 0.3};
    std::array<std::size_t, 5> counts{};
    const std::size_t n = 200000;
    for (std::size_t i = 0; i < n; ++i) ++counts[sample_discrete(weights, rng)];
    CHECK(counts[0] == 0);
    CHECK(counts[2] == 0);
    double chi2 = 0.0;
    for (std::size_t a : {1u, 3u, 4u}) {
        const double expected = weights[a] * static_cast<double>(n);
        chi2 += (static_cast<double>(counts[a]) - expected) * (static_cast<double>(counts[a]) - expected) / expected;
    }
    CHECK(chi2 < 13.8);  // chi-square, 2 dof, p = 0.001

    const std::array<double, 2> zeros{0.0, 0.0};
    CHECK_THROWS_AS(sample_discrete(zeros, rng), ArgumentError);
}

TEST_CASE("embedding table rejects non-finite entries") {
    RowMatrix m(2, 1);
    m << 0.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(EmbeddingTable{m}, ArgumentError);
    RowMatrix ok(2, 2);
    ok << 0, 0, 3, 4;
    CHECK(EmbeddingTable(ok).squared_distance(0, 1) == doctest::Approx(25.0));
}

TEST_CASE("probability row checks") {
    const std::array<double, 3> good{0.2, 0.3, 0.5};
    const std::array<double, 3> negative{-0.1, 0.6, 0.5};
    const std::array<double, 3> short_sum{0.2, 0.3, 0.4};
    CHECK_NOTHROW(check_probability_row(good));
    CHECK_THROWS_AS(check_probability_row(negative), DataIntegrityError);
    CHECK_THROWS_AS(check_probability_row(short_sum), DataIntegrityError);
    CHECK_THROWS_AS(TabularPolicy(RowMatrix::Constant(1, 3, 0.5)), DataIntegrityError);
}

TEST_CASE("toy true values") {
    const auto toy = toy_instance();
    CHECK(true_value(*toy.target, *toy.oracle, toy.contexts) == doctest::Approx(17.0).epsilon(1e-12));
    CHECK(true_value(*toy.logging, *toy.oracle, toy.contexts) == doctest::Approx(13.0).epsilon(1e-12));
    CHECK(true_value(UniformPolicy(4), *toy.oracle, toy.contexts) == doctest::Approx(12.5).epsilon(1e-12));
    CHECK_THROWS_AS(true_value(*toy.target, *toy.oracle, std::span<const Context>{}), ArgumentError);
    CHECK_THROWS_AS(true_value(UniformPolicy(5), *toy.oracle, toy.contexts), ArgumentError);
}

TEST_CASE("logged propensities") {
    const auto toy = toy_instance();
    const BanditDataset ds({LoggedInteraction{toy.contexts[0], 3, 20.0}}, toy.logging, toy.embeddings);
    CHECK(logged_propensity(ds, 0) == doctest::Approx(0.2));
    CHECK_THROWS_AS(logged_propensity(ds, 1), ArgumentError);

    const BanditDataset uniform({LoggedInteraction{toy.contexts[0], 2, 15.0}},
                                std::make_shared<const UniformPolicy>(4), toy.embeddings);
    CHECK(logged_propensity(uniform, 0) == doctest::Approx(0.25));

    RowMatrix degenerate(1, 4);
    degenerate << 0.5, 0.5, 0.0, 0.0;
    const auto mu0 = std::make_shared<const TabularPolicy>(degenerate);
    CHECK_THROWS_AS(BanditDataset({LoggedInteraction{toy.contexts[0], 3, 20.0}}, mu0, toy.embeddings),
                    DataIntegrityError);
}

TEST_CASE("dataset validation") {
    const auto toy = toy_instance();
    CHECK_THROWS_AS(BanditDataset({LoggedInteraction{toy.contexts[0], 4, 1.0}}, toy.logging, toy.embeddings),
                    ArgumentError);
    CHECK_THROWS_AS(BanditDataset({LoggedInteraction{toy.contexts[0], 1, std::numeric_limits<double>::infinity()}},
                                  toy.logging, toy.embeddings),
                    DataIntegrityError);
    const auto wide = std::make_shared<const EmbeddingTable>(RowMatrix::Zero(5, 1));
    CHECK_THROWS_AS(BanditDataset({LoggedInteraction{toy.contexts[0], 1, 1.0}}, toy.logging, wide), ArgumentError);
}

TEST_CASE("policy rows are probability vectors over random contexts") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto t = random_instance(100, 7, seed);
        for (const auto& c : t.contexts) {
            for (const PolicyEvaluator* p : {static_cast<const PolicyEvaluator*>(t.target.get()),
                                             static_cast<const PolicyEvaluator*>(t.logging.get())}) {
                const Vector row = p->prob_row(c);
                CHECK_NOTHROW(check_probability_row(std::span<const double>(row.data(), row.size())));
            }
        }
    }
}

TEST_CASE("uniform true value is the mean reward, independent of context order") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto t = random_instance(6, 5, seed + 100);
        const double direct = t.delta.mean();
        CHECK(true_value(UniformPolicy(5), *t.oracle, t.contexts) == doctest::Approx(direct).epsilon(1e-12));

        std::vector<Context> shuffled = t.contexts;
        Rng rng = make_rng(seed, "shuffle");
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(true_value(*t.target, *t.oracle, shuffled) ==
              doctest::Approx(true_value(*t.target, *t.oracle, t.contexts)).epsilon(1e-12));
    }
}

TEST_CASE("grouped tabulation matches one policy at a time") {
    const auto t = random_instance(8, 6, 3);
    const auto softmax = std::make_shared<const SoftmaxPolicy>(t.oracle, 2.0);
    const auto greedy = std::make_shared<const EpsilonGreedyPolicy>(t.oracle, 0.1);
    const PolicyEvaluator* policies[] = {softmax.get(), t.target.get(), greedy.get()};
    const auto grouped = tabulate(policies, t.contexts);
    REQUIRE(grouped.size() == 3);
    for (std::size_t p = 0; p < 3; ++p) {
        const PolicyTable single = tabulate(*policies[p], t.contexts);
        CHECK((grouped[p].matrix() - single.matrix()).cwiseAbs().maxCoeff() == 0.0);
    }
}
