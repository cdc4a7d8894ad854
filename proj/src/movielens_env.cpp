#include "opelab/movielens_env.hpp"

#include "opelab/errors.hpp"
#include "opelab/synth_env.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <string_view>

namespace opelab {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == '\t' || line[i] == ' ' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != '\t' && line[i] != ' ' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

long long parse_integer(std::string_view field, std::size_t line_no, const char* name) {
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw ParseError(std::string("invalid ") + name + " '" + std::string(field) + "'", line_no);
    }
    return value;
}

}  // namespace

RatingsMatrix parse_movielens(std::istream& in) {
    RatingsMatrix out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto fields = split_fields(line);
        if (fields.empty()) continue;
        if (fields.size() != 4) {
            throw ParseError("expected 4 fields (user, item, rating, timestamp), found " +
                                 std::to_string(fields.size()),
                             line_no);
        }
        const long long user = parse_integer(fields[0], line_no, "user id");
        const long long item = parse_integer(fields[1], line_no, "item id");
        const long long rating = parse_integer(fields[2], line_no, "rating");
        parse_integer(fields[3], line_no, "timestamp");
        if (user < 1 || item < 1) throw ParseError("ids are 1-based", line_no);
        if (rating < 1 || rating > 5) {
            throw DataIntegrityError("line " + std::to_string(line_no) + ": rating " + std::to_string(rating) +
                                     " outside 1-5");
        }
        Rating r{static_cast<std::size_t>(user - 1), static_cast<std::size_t>(item - 1), static_cast<int>(rating)};
        out.n_users = std::max(out.n_users, r.user + 1);
        out.n_items = std::max(out.n_items, r.item + 1);
        out.entries.push_back(r);
    }
    if (in.bad()) throw IoError("read failure after line " + std::to_string(line_no));
    return out;
}

RatingsMatrix load_movielens(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ratings file " + path.string());
    return parse_movielens(in);
}

BinaryRatings binarize(const RatingsMatrix& ratings) {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(ratings.entries.size());
    for (const auto& r : ratings.entries) {
        if (r.user >= ratings.n_users || r.item >= ratings.n_items) {
            throw DataIntegrityError("rating index outside the matrix bounds");
        }
        if (r.rating < 1 || r.rating > 5) throw DataIntegrityError("rating outside 1-5");
        triplets.emplace_back(static_cast<int>(r.user), static_cast<int>(r.item), r.rating >= 4 ? 1.0 : 0.0);
    }
    BinaryRatings out(static_cast<Eigen::Index>(ratings.n_users), static_cast<Eigen::Index>(ratings.n_items));
    bool duplicate = false;
    out.setFromTriplets(triplets.begin(), triplets.end(), [&duplicate](double a, double) {
        duplicate = true;
        return a;
    });
    if (duplicate) throw DataIntegrityError("duplicate (user, item) rating");
    return out;
}

FactorModel factorize(const BinaryRatings& binary, std::size_t rank, std::uint64_t seed) {
    const Eigen::Index m = binary.rows();
    const Eigen::Index n = binary.cols();
    if (m == 0 || n == 0 || binary.nonZeros() == 0) {
        throw DataIntegrityError("cannot factorize an empty ratings matrix");
    }
    const auto k = static_cast<Eigen::Index>(rank);
    if (k < 1 || k > std::min(m, n)) {
        throw ArgumentError("rank " + std::to_string(rank) + " must be in [1, " + std::to_string(std::min(m, n)) +
                            "]");
    }
    const Eigen::Index width = std::min(std::min(m, n), k + std::max<Eigen::Index>(10, k));
    constexpr int min_iterations = 7;
    constexpr int max_iterations = 500;
    constexpr double subspace_tolerance = 1e-11;

    Rng rng = make_rng(seed, "svd-sketch");
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd omega(n, width);
    for (Eigen::Index j = 0; j < width; ++j)
        for (Eigen::Index i = 0; i < n; ++i) omega(i, j) = normal(rng);

    auto orthonormal = [](const Eigen::MatrixXd& y) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
        return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols()));
    };

    // subspace iteration until the leading k left singular vectors settle
    Eigen::MatrixXd q = orthonormal(binary * omega);
    Eigen::MatrixXd leading;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd;
    for (int it = 1; it <= max_iterations; ++it) {
        const Eigen::MatrixXd z = orthonormal(binary.transpose() * q);
        q = orthonormal(binary * z);
        svd.compute(binary.transpose() * q, Eigen::ComputeThinU | Eigen::ComputeThinV);  // n x width
        Eigen::MatrixXd current = q * svd.matrixV().leftCols(k);
        if (it >= min_iterations && leading.size() > 0) {
            const double drift = (current - leading * (leading.transpose() * current)).cwiseAbs().maxCoeff();
            if (drift < subspace_tolerance) break;
        }
        leading = std::move(current);
    }

    FactorModel out;
    out.singular_values = svd.singularValues().head(k);
    const Eigen::ArrayXd scale = out.singular_values.array().sqrt();
    out.user_factors = (q * svd.matrixV().leftCols(k)) * scale.matrix().asDiagonal();
    out.item_factors = svd.matrixU().leftCols(k) * scale.matrix().asDiagonal();
    return out;
}

// ---------------------------------------------------------------------------

MovielensRewardOracle::MovielensRewardOracle(BinaryRatings binary, std::shared_ptr<const FactorModel> factors)
    : binary_(std::move(binary)), factors_(std::move(factors)) {
    if (!factors_) throw ArgumentError("reward oracle needs a factor model");
    if (factors_->user_factors.rows() != binary_.rows() || factors_->item_factors.rows() != binary_.cols()) {
        throw ArgumentError("factor shapes do not match the ratings matrix");
    }
    binary_.makeCompressed();
}

std::size_t MovielensRewardOracle::user_of(const Context& context) const {
    if (context.id < 0 || context.id >= binary_.rows()) {
        throw ArgumentError("context does not identify a user (id " + std::to_string(context.id) + ")");
    }
    return static_cast<std::size_t>(context.id);
}

double MovielensRewardOracle::expected_reward(std::size_t action, const Context& context) const {
    const auto u = static_cast<Eigen::Index>(user_of(context));
    if (action >= n_actions()) throw ArgumentError("action " + std::to_string(action) + " out of range");
    const auto a = static_cast<Eigen::Index>(action);
    for (BinaryRatings::InnerIterator it(binary_, u); it; ++it) {
        if (it.col() == a) return it.value();
    }
    const double dot = factors_->user_factors.row(u).dot(factors_->item_factors.row(a));
    return std::clamp(dot, 0.0, 1.0);
}

Vector MovielensRewardOracle::reward_row(const Context& context) const {
    const auto u = static_cast<Eigen::Index>(user_of(context));
    Vector row = (factors_->item_factors * factors_->user_factors.row(u).transpose()).cwiseMax(0.0).cwiseMin(1.0);
    for (BinaryRatings::InnerIterator it(binary_, u); it; ++it) row[it.col()] = it.value();
    return row;
}

// ---------------------------------------------------------------------------

TwoStageLoggingPolicy::TwoStageLoggingPolicy(std::shared_ptr<const RewardOracle> oracle, double beta,
                                             double eps_floor, std::uint64_t seed, std::size_t top,
                                             std::size_t random)
    : oracle_(std::move(oracle)), beta_(beta), eps_floor_(eps_floor), seed_(seed), top_(top), random_(random) {
    if (!oracle_) throw ArgumentError("two-stage policy needs an oracle");
    if (!std::isfinite(beta_)) throw ArgumentError("beta must be finite");
    if (!(eps_floor_ > 0.0 && eps_floor_ < 1.0)) throw ArgumentError("eps_floor must be in (0, 1)");
    if (top_ + random_ == 0) throw ArgumentError("shortlist must be nonempty");
    if (oracle_->n_actions() < top_ + random_) {
        throw ArgumentError("two-stage policy needs at least " + std::to_string(top_ + random_) + " items, got " +
                            std::to_string(oracle_->n_actions()));
    }
}

Vector TwoStageLoggingPolicy::prob_row(const Context& context) const {
    return prob_row_from_rewards(oracle_->reward_row(context), context);
}

Vector TwoStageLoggingPolicy::prob_row_from_rewards(const Vector& rewards, const Context& context) const {
    const auto n = static_cast<std::size_t>(rewards.size());
    if (n < top_ + random_) throw ArgumentError("reward row shorter than the shortlist");
    if (context.id < 0) throw ArgumentError("two-stage policy needs a user id in the context");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_), order.end(),
                      [&rewards](std::size_t a, std::size_t b) {
                          const double ra = rewards[static_cast<Eigen::Index>(a)];
                          const double rb = rewards[static_cast<Eigen::Index>(b)];
                          return ra != rb ? ra > rb : a < b;
                      });
    // order[top_..] holds the remaining items; sort them so the random pick
    // depends only on the seed and the top set
    std::sort(order.begin() + static_cast<std::ptrdiff_t>(top_), order.end());

    Rng rng = make_rng(seed_, "two-stage-logits", static_cast<std::uint64_t>(context.id));
    std::uniform_real_distribution<double> top_logit(0.0, 1.0);
    std::uniform_real_distribution<double> random_logit(0.0, 0.8);
    const std::size_t shortlist = top_ + random_;
    std::vector<double> logits(shortlist);
    for (std::size_t i = 0; i < top_; ++i) logits[i] = top_logit(rng);
    for (std::size_t i = top_; i < shortlist; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
        logits[i] = random_logit(rng);
    }

    const double peak = beta_ * *std::max_element(logits.begin(), logits.end(),
                                                  [this](double a, double b) { return beta_ * a < beta_ * b; });
    double total = 0.0;
    for (auto& l : logits) {
        l = std::exp(beta_ * l - peak);
        total += l;
    }
    Vector row = Vector::Constant(rewards.size(), eps_floor_ / static_cast<double>(n));
    for (std::size_t i = 0; i < shortlist; ++i) {
        row[static_cast<Eigen::Index>(order[i])] += (1.0 - eps_floor_) * logits[i] / total;
    }
    return row;
}

// ---------------------------------------------------------------------------

MovielensWorld build_movielens_world(const RatingsMatrix& ratings, const MovielensConfig& config) {
    MovielensWorld world;
    world.config = config;
    BinaryRatings binary = binarize(ratings);
    for (Eigen::Index u = 0; u < binary.outerSize(); ++u)
        for (BinaryRatings::InnerIterator it(binary, u); it; ++it) world.n_ones += it.value() > 0.5 ? 1 : 0;
    world.factors = std::make_shared<const FactorModel>(factorize(binary, config.rank, config.seed));
    world.oracle = std::make_shared<const MovielensRewardOracle>(std::move(binary), world.factors);
    world.embeddings = std::make_shared<const EmbeddingTable>(world.factors->item_factors);
    world.logging = std::make_shared<const TwoStageLoggingPolicy>(world.oracle, config.beta, config.eps_floor,
                                                                  derive_seed(config.seed, "logging-logits"));
    world.target = std::make_shared<const EpsilonGreedyPolicy>(world.oracle, config.target_epsilon);
    world.users.resize(world.oracle->n_users());
    for (std::size_t u = 0; u < world.users.size(); ++u) {
        world.users[u].features = world.factors->user_factors.row(static_cast<Eigen::Index>(u)).transpose();
        world.users[u].id = static_cast<std::int64_t>(u);
    }
    return world;
}

double movielens_true_value(const MovielensWorld& world, const PolicyEvaluator& policy) {
    return true_value(policy, *world.oracle, world.users);
}

LoggedData generate_movielens_dataset(const MovielensWorld& world, std::shared_ptr<const PolicyEvaluator> logging,
                                      const PolicyEvaluator& target, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ArgumentError("dataset size must be at least 1");
    if (!logging || logging->n_actions() != world.oracle->n_actions()) {
        throw ArgumentError("logging policy does not match the item count");
    }
    Rng user_rng = make_rng(seed, "users");
    std::uniform_int_distribution<std::size_t> pick_user(0, world.users.size() - 1);
    std::vector<Context> contexts(n);
    for (auto& c : contexts) c = world.users[pick_user(user_rng)];

    const PolicyEvaluator* policies[] = {logging.get(), &target};
    auto tables = tabulate(policies, contexts);

    Rng action_rng = make_rng(seed, "actions");
    std::vector<LoggedInteraction> interactions(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& it = interactions[i];
        it.action = sample_discrete(tables[0].row(i), action_rng);
        it.reward = world.oracle->expected_reward(it.action, contexts[i]);
        it.context = std::move(contexts[i]);
    }
    BanditDataset dataset(std::move(interactions), std::move(logging), world.embeddings, std::move(tables[0]),
                          DatasetMeta{"movielens", seed});
    return LoggedData{std::move(dataset), std::move(tables[1])};
}

}  // namespace opelab
