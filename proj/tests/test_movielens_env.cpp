#include "support.hpp"

#include "opelab/errors.hpp"
#include "opelab/movielens_env.hpp"
#include "opelab/synth_env.hpp"

#include <doctest.h>

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

using namespace opelab;

namespace {

RatingsMatrix parse(const std::string& text) {
    std::istringstream in(text);
    return parse_movielens(in);
}

Eigen::MatrixXd dense(const BinaryRatings& b) { return Eigen::MatrixXd(b); }

BinaryRatings random_binary(std::size_t rows, std::size_t cols, double density, std::uint64_t seed) {
    Rng rng = make_rng(seed, "binary");
    std::bernoulli_distribution observed(density), positive(0.5);
    RatingsMatrix r;
    r.n_users = rows;
    r.n_items = cols;
    for (std::size_t u = 0; u < rows; ++u)
        for (std::size_t i = 0; i < cols; ++i)
            if (observed(rng)) r.entries.push_back({u, i, positive(rng) ? 5 : 2});
    return binarize(r);
}

RatingsMatrix synthetic(std::size_t users, std::size_t items, std::size_t n, std::uint64_t seed) {
    std::stringstream buffer;
    testing::write_synthetic_ratings(buffer, users, items, n, seed);
    return parse_movielens(buffer);
}

}  // namespace

TEST_CASE("parsing the ratings format") {
    const auto r = parse("196\t242\t3\t881250949\n");
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].user == 195);
    CHECK(r.entries[0].item == 241);
    CHECK(r.entries[0].rating == 3);
    CHECK(r.n_users == 196);
    CHECK(r.n_items == 242);

    const auto two = parse("1 2 5 0\n\n3\t1\t1\t7\n");
    CHECK(two.entries.size() == 2);
    CHECK(two.n_users == 3);
    CHECK(two.n_items == 2);

    const auto empty = parse("");
    CHECK(empty.entries.empty());
    CHECK_THROWS_AS(factorize(binarize(empty), 1, 0), DataIntegrityError);

    try {
        parse("1\t2\t3\t4\n1\t2\t3\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse("1\tx\t3\t4\n"), ParseError);
    CHECK_THROWS_AS(parse("0\t1\t3\t4\n"), ParseError);
    CHECK_THROWS_AS(parse("1\t1\t6\t4\n"), DataIntegrityError);
    CHECK_THROWS_AS(parse("1\t1\t0\t4\n"), DataIntegrityError);
    CHECK_THROWS_AS(load_movielens("/nonexistent/u.data"), IoError);
}

TEST_CASE("binarization") {
    const auto r = parse("1\t1\t4\t0\n1\t2\t3\t0\n2\t2\t5\t0\n2\t3\t1\t0\n");
    const auto b = binarize(r);
    CHECK(b.rows() == 2);
    CHECK(b.cols() == 3);
    CHECK(b.nonZeros() == 4);  // explicit zeros are kept
    CHECK(b.coeff(0, 0) == 1.0);
    CHECK(b.coeff(0, 1) == 0.0);
    CHECK(b.coeff(1, 1) == 1.0);
    CHECK(b.coeff(1, 2) == 0.0);

    const auto all_five = binarize(parse("1\t1\t5\t0\n1\t3\t5\t0\n2\t2\t5\t0\n"));
    CHECK(all_five.sum() == 3.0);
    CHECK(all_five.nonZeros() == 3);

    const auto many = synthetic(60, 80, 1500, 3);
    const auto bm = binarize(many);
    const auto high = std::count_if(many.entries.begin(), many.entries.end(), [](const Rating& x) { return x.rating >= 4; });
    CHECK(bm.sum() == static_cast<double>(high));
    CHECK(bm.nonZeros() == 1500);

    CHECK_THROWS_AS(binarize(parse("1\t1\t5\t0\n1\t1\t2\t9\n")), DataIntegrityError);
}

TEST_CASE("factorization") {
    const auto ones = binarize(parse("1\t1\t5\t0\n1\t2\t5\t0\n1\t3\t5\t0\n2\t1\t5\t0\n2\t2\t5\t0\n2\t3\t5\t0\n"
                                     "3\t1\t5\t0\n3\t2\t5\t0\n3\t3\t5\t0\n"));
    const auto f1 = factorize(ones, 1, 4);
    CHECK(f1.rank() == 1);
    CHECK((f1.user_factors * f1.item_factors.transpose() - Eigen::MatrixXd::Ones(3, 3)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(factorize(ones, 4, 0), ArgumentError);
    CHECK_THROWS_AS(factorize(ones, 0, 0), ArgumentError);

    const auto b = random_binary(50, 40, 0.4, 9);
    const Eigen::MatrixXd d = dense(b);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(d, Eigen::ComputeThinU | Eigen::ComputeThinV);
    double previous = 1e300;
    for (std::size_t k : {1u, 2u, 4u, 8u}) {
        const auto f = factorize(b, k, 17);
        CHECK(f.user_factors.rows() == 50);
        CHECK(f.item_factors.rows() == 40);
        CHECK(f.user_factors.cols() == static_cast<Eigen::Index>(k));
        const auto ki = static_cast<Eigen::Index>(k);
        for (Eigen::Index j = 0; j < ki; ++j)
            CHECK(f.singular_values[j] == doctest::Approx(svd.singularValues()[j]).epsilon(1e-6));
        const Eigen::MatrixXd approx = f.user_factors * f.item_factors.transpose();
        const Eigen::MatrixXd exact = svd.matrixU().leftCols(ki) * svd.singularValues().head(ki).asDiagonal() *
                                      svd.matrixV().leftCols(ki).transpose();
        CHECK((approx - exact).cwiseAbs().maxCoeff() < 1e-6);
        const double error = (d - approx).norm();
        CHECK(error <= previous + 1e-12);
        previous = error;

        const auto again = factorize(b, k, 17);
        CHECK(again.user_factors == f.user_factors);
    }
}

TEST_CASE("reward oracle rules") {
    const auto b = random_binary(50, 40, 0.3, 21);
    const Eigen::MatrixXd d = dense(b);
    const auto factors = std::make_shared<const FactorModel>(factorize(b, 5, 2));
    const MovielensRewardOracle oracle(b, factors);
    CHECK(oracle.n_actions() == 40);
    CHECK(oracle.n_users() == 50);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(d, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd reconstruction = svd.matrixU().leftCols(5) * svd.singularValues().head(5).asDiagonal() *
                                           svd.matrixV().leftCols(5).transpose();
    std::size_t observed = 0, completed = 0;
    for (std::size_t u = 0; u < 50; ++u) {
        const Context ctx{factors->user_factors.row(static_cast<Eigen::Index>(u)).transpose(), static_cast<std::int64_t>(u)};
        const Vector row = oracle.reward_row(ctx);
        for (std::size_t i = 0; i < 40; ++i) {
            const auto ui = static_cast<Eigen::Index>(u), ii = static_cast<Eigen::Index>(i);
            double expected = std::clamp(reconstruction(ui, ii), 0.0, 1.0);
            if (b.coeff(ui, ii) != 0.0) expected = b.coeff(ui, ii);
            bool is_observed = false;
            for (BinaryRatings::InnerIterator it(b, ui); it; ++it) is_observed = is_observed || it.col() == ii;
            if (is_observed) {
                expected = b.coeff(ui, ii);
                ++observed;
            } else {
                ++completed;
            }
            CHECK(std::abs(row[ii] - expected) < 1e-6);
            CHECK(oracle.expected_reward(i, ctx) == doctest::Approx(row[ii]).epsilon(1e-14));
        }
    }
    CHECK(observed > 0);
    CHECK(completed > 0);

    const auto r = parse("1\t1\t5\t0\n1\t2\t2\t0\n2\t1\t1\t0\n2\t2\t4\t0\n");
    const auto small_f = std::make_shared<const FactorModel>(factorize(binarize(r), 1, 0));
    const MovielensRewardOracle small(binarize(r), small_f);
    CHECK(small.expected_reward(0, Context{Vector(), 0}) == 1.0);
    CHECK(small.expected_reward(1, Context{Vector(), 0}) == 0.0);
    CHECK_THROWS_AS(small.expected_reward(0, Context{Vector(), -1}), ArgumentError);
    CHECK_THROWS_AS(small.expected_reward(0, Context{Vector(), 2}), ArgumentError);
}

TEST_CASE("two-stage logging policy") {
    const auto ratings = synthetic(40, 1682, 6000, 5);
    MovielensConfig config;
    config.seed = 3;
    const auto world = build_movielens_world(ratings, config);
    REQUIRE(world.oracle->n_actions() == 1682);
    const double floor = 0.1 / 1682.0;
    CHECK(floor == doctest::Approx(5.95e-5).epsilon(1e-3));
    const auto& policy = dynamic_cast<const TwoStageLoggingPolicy&>(*world.logging);

    for (const auto& user : world.users) {
        const Vector row = world.logging->prob_row(user);
        CHECK(row.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(row.minCoeff() == doctest::Approx(floor).epsilon(1e-12));
        const auto above = (row.array() > floor * (1.0 + 1e-9)).count();
        CHECK(above == 500);
        const Vector rewards = world.oracle->reward_row(user);
        std::vector<std::size_t> order(1682);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return rewards[static_cast<Eigen::Index>(a)] > rewards[static_cast<Eigen::Index>(b)];
        });
        for (std::size_t r = 0; r < 100; ++r) CHECK(row[static_cast<Eigen::Index>(order[r])] > floor);
        CHECK(world.logging->prob_row(user) == row);
        CHECK(policy.prob_row_from_rewards(rewards, user) == row);
    }
    CHECK(world.logging->prob_row(world.users[0]) != world.logging->prob_row(world.users[1]));

    // beta = 0 gives a flat shortlist
    const TwoStageLoggingPolicy flat(world.oracle, 0.0, 0.1, 1);
    const Vector row = flat.prob_row(world.users[2]);
    std::set<double> levels;
    for (Eigen::Index i = 0; i < row.size(); ++i) levels.insert(row[i]);
    CHECK(levels.size() == 2);
    CHECK(*levels.rbegin() == doctest::Approx(floor + 0.9 / 500.0).epsilon(1e-12));

    CHECK_THROWS_AS(TwoStageLoggingPolicy(world.oracle, 1.0, 0.0, 1), ArgumentError);
    CHECK_THROWS_AS(TwoStageLoggingPolicy(world.oracle, 1.0, 1.0, 1), ArgumentError);
    const auto narrow = synthetic(10, 450, 900, 6);
    const auto narrow_factors = std::make_shared<const FactorModel>(factorize(binarize(narrow), 2, 0));
    const auto narrow_oracle = std::make_shared<const MovielensRewardOracle>(binarize(narrow), narrow_factors);
    CHECK_THROWS_AS(TwoStageLoggingPolicy(narrow_oracle, 1.0, 0.1, 1), ArgumentError);
}

TEST_CASE("world assembly and logged data") {
    const auto ratings = synthetic(30, 600, 3000, 8);
    MovielensConfig config;
    config.rank = 6;
    config.seed = 4;
    const auto world = build_movielens_world(ratings, config);
    CHECK(world.users.size() == 30);
    CHECK(world.embeddings->n_actions() == 600);
    CHECK(world.embeddings->dim() == 6);
    CHECK(world.users[7].id == 7);
    CHECK(world.users[7].features.size() == 6);
    const auto high = std::count_if(ratings.entries.begin(), ratings.entries.end(), [](const Rating& x) { return x.rating >= 4; });
    CHECK(world.n_ones == static_cast<std::size_t>(high));

    const auto target = world.target;
    for (const auto& u : world.users) {
        const Vector row = target->prob_row(u);
        CHECK(row.sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(row.maxCoeff() == doctest::Approx(0.95 + 0.05 / 600.0).epsilon(1e-12));
    }
    const double v = movielens_true_value(world, *target);
    CHECK(v >= movielens_true_value(world, *world.logging));

    const auto data = generate_movielens_dataset(world, world.logging, *target, 500, 11);
    CHECK(data.dataset.size() == 500);
    CHECK(data.target.size() == 500);
    for (std::size_t i = 0; i < 500; ++i) {
        const auto& it = data.dataset[i];
        CHECK(it.reward == world.oracle->expected_reward(it.action, it.context));
        CHECK(data.dataset.propensities()[i] == world.logging->prob_row(it.context)[static_cast<Eigen::Index>(it.action)]);
    }
    const auto again = generate_movielens_dataset(world, world.logging, *target, 500, 11);
    for (std::size_t i = 0; i < 500; ++i) CHECK(again.dataset[i].action == data.dataset[i].action);
    CHECK_THROWS_AS(generate_movielens_dataset(world, world.logging, *target, 0, 1), ArgumentError);
}
