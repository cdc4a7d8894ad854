#include "opelab/action_structure.hpp"

#include "opelab/errors.hpp"
#include "opelab/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace opelab {

std::string_view to_string(ConvolutionKind kind) {
    switch (kind) {
        case ConvolutionKind::kernel: return "kernel";
        case ConvolutionKind::tree: return "tree";
        case ConvolutionKind::ball: return "ball";
        case ConvolutionKind::knn: return "knn";
    }
    return "?";
}

ConvolutionKind parse_convolution_kind(std::string_view text) {
    if (text == "kernel") return ConvolutionKind::kernel;
    if (text == "tree") return ConvolutionKind::tree;
    if (text == "ball") return ConvolutionKind::ball;
    if (text == "knn") return ConvolutionKind::knn;
    throw ArgumentError("unknown convolution kind '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// ActionTree

ActionTree::ActionTree(std::vector<Level> levels) : levels_(std::move(levels)) {
    if (levels_.empty()) throw ArgumentError("action tree needs at least one level");

    n_actions_ = levels_.front().size();
    membership_.assign(levels_.size(), std::vector<std::uint32_t>(n_actions_));

    for (std::size_t d = 0; d < levels_.size(); ++d) {
        std::vector<bool> seen(n_actions_, false);
        std::size_t covered = 0;
        for (std::size_t c = 0; c < levels_[d].size(); ++c) {
            auto& cluster = levels_[d][c];
            if (cluster.empty()) throw ArgumentError("action tree level " + std::to_string(d + 1) + " has an empty cluster");
            std::sort(cluster.begin(), cluster.end());
            for (std::size_t a : cluster) {
                if (a >= n_actions_ || seen[a]) {
                    throw ArgumentError("action tree level " + std::to_string(d + 1) + " is not a partition");
                }
                seen[a] = true;
                membership_[d][a] = static_cast<std::uint32_t>(c);
                ++covered;
            }
        }
        if (covered != n_actions_) throw ArgumentError("action tree level " + std::to_string(d + 1) + " does not cover every action");
    }

    for (const auto& cluster : levels_.front()) {
        if (cluster.size() != 1) throw ArgumentError("action tree level 1 must hold singletons");
    }
    if (levels_.size() >= 2 && levels_.back().size() != 1) {
        throw ArgumentError("action tree root level must be a single meta-action");
    }
    // nested: actions sharing a level-(d-1) cluster share the level-d cluster
    for (std::size_t d = 1; d < levels_.size(); ++d) {
        for (const auto& child : levels_[d - 1]) {
            const auto parent = membership_[d][child.front()];
            for (std::size_t a : child) {
                if (membership_[d][a] != parent) {
                    throw ArgumentError("action tree level " + std::to_string(d + 1) + " is not nested over level " +
                                        std::to_string(d));
                }
            }
        }
    }
}

const ActionTree::Level& ActionTree::level(int d) const {
    if (d < 1 || d > depth()) throw ArgumentError("tree level " + std::to_string(d) + " outside [1, " + std::to_string(depth()) + "]");
    return levels_[static_cast<std::size_t>(d - 1)];
}

const ActionTree::Cluster& ActionTree::cluster_of(int d, std::size_t action) const {
    const auto& lvl = level(d);
    if (action >= n_actions_) throw ArgumentError("action " + std::to_string(action) + " out of range");
    return lvl[membership_[static_cast<std::size_t>(d - 1)][action]];
}

std::string ActionTree::to_text() const {
    std::ostringstream out;
    for (const auto& lvl : levels_) {
        for (std::size_t c = 0; c < lvl.size(); ++c) {
            if (c > 0) out << ';';
            for (std::size_t i = 0; i < lvl[c].size(); ++i) {
                if (i > 0) out << ',';
                out << lvl[c][i];
            }
        }
        out << '\n';
    }
    return out.str();
}

ActionTree ActionTree::from_text(std::string_view text) {
    std::vector<Level> levels;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto eol = text.find('\n');
        std::string_view line = text.substr(0, eol);
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        ++line_no;
        if (line.empty()) continue;

        Level lvl;
        Cluster current;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const auto end = line.find_first_of(",;", pos);
            const auto token = line.substr(pos, end == std::string_view::npos ? line.size() - pos : end - pos);
            std::size_t value = 0;
            const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
            if (ec != std::errc{} || ptr != token.data() + token.size()) {
                throw ParseError("bad action index '" + std::string(token) + "'", line_no);
            }
            current.push_back(value);
            if (end == std::string_view::npos || line[end] == ';') {
                lvl.push_back(std::move(current));
                current.clear();
            }
            if (end == std::string_view::npos) break;
            pos = end + 1;
        }
        levels.push_back(std::move(lvl));
    }
    return ActionTree(std::move(levels));
}

int max_tree_depth(std::size_t n_actions) {
    if (n_actions == 0) return 0;
    int d = 1;
    while ((std::size_t{1} << d) <= n_actions) ++d;
    return d;
}

namespace {

struct Bisection {
    ActionTree::Cluster first;
    ActionTree::Cluster second;
    double sse = std::numeric_limits<double>::infinity();
};

Bisection bisect(const EmbeddingTable& emb, const ActionTree::Cluster& members, Rng& rng) {
    constexpr int restarts = 4;
    constexpr int lloyd_iterations = 50;
    const std::size_t m = members.size();

    Bisection best;
    std::vector<int> label(m);
    std::vector<double> d2(m);

    for (int r = 0; r < restarts; ++r) {
        const std::size_t first = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
        for (std::size_t i = 0; i < m; ++i) d2[i] = emb.squared_distance(members[i], members[first]);
        if (std::all_of(d2.begin(), d2.end(), [](double v) { return v == 0.0; })) {
            // identical points: any split is optimal, halve by index
            Bisection halves;
            halves.first.assign(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(m / 2));
            halves.second.assign(members.begin() + static_cast<std::ptrdiff_t>(m / 2), members.end());
            halves.sse = 0.0;
            return halves;
        }
        const std::size_t second = sample_discrete(d2, rng);

        Eigen::RowVectorXd centers[2] = {emb.row(members[first]), emb.row(members[second])};
        std::fill(label.begin(), label.end(), -1);

        for (int it = 0; it < lloyd_iterations; ++it) {
            bool changed = false;
            std::size_t counts[2] = {0, 0};
            for (std::size_t i = 0; i < m; ++i) {
                const auto x = emb.row(members[i]);
                const double da = (x - centers[0]).squaredNorm();
                const double db = (x - centers[1]).squaredNorm();
                const int l = db < da ? 1 : 0;
                if (l != label[i]) changed = true;
                label[i] = l;
                ++counts[l];
            }
            for (int side = 0; side < 2; ++side) {
                if (counts[side] != 0) continue;
                // move the point farthest from the occupied center into the empty cluster
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double dd = (emb.row(members[i]) - centers[1 - side]).squaredNorm();
                    if (dd > far_d) {
                        far_d = dd;
                        far = i;
                    }
                }
                label[far] = side;
                ++counts[side];
                --counts[1 - side];
                changed = true;
            }
            for (int side = 0; side < 2; ++side) centers[side].setZero();
            for (std::size_t i = 0; i < m; ++i) centers[label[i]] += emb.row(members[i]);
            for (int side = 0; side < 2; ++side) centers[side] /= static_cast<double>(counts[side]);
            if (!changed) break;
        }

        double sse = 0.0;
        for (std::size_t i = 0; i < m; ++i) sse += (emb.row(members[i]) - centers[label[i]]).squaredNorm();
        if (sse < best.sse) {
            best = Bisection{};
            best.sse = sse;
            // the child holding the smallest member comes first
            const int first_label = label[0];
            for (std::size_t i = 0; i < m; ++i) {
                (label[i] == first_label ? best.first : best.second).push_back(members[i]);
            }
        }
    }
    return best;
}

}  // namespace

ActionTree build_tree(const EmbeddingTable& embeddings, int depth, std::uint64_t seed) {
    const std::size_t n = embeddings.n_actions();
    if (depth < 1) throw ArgumentError("tree depth must be at least 1");
    if (n == 0 || depth > max_tree_depth(n)) {
        throw ArgumentError("tree depth " + std::to_string(depth) + " too large for " + std::to_string(n) +
                            " actions (need 2^(depth-1) <= actions)");
    }

    std::vector<ActionTree::Level> levels(static_cast<std::size_t>(depth));
    if (depth >= 2) {
        ActionTree::Cluster all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        levels.back().push_back(std::move(all));
        for (int d = depth - 1; d >= 2; --d) {
            const auto& parents = levels[static_cast<std::size_t>(d)];
            auto& children = levels[static_cast<std::size_t>(d - 1)];
            for (std::size_t j = 0; j < parents.size(); ++j) {
                if (parents[j].size() < 2) {
                    children.push_back(parents[j]);
                    continue;
                }
                Rng rng = make_rng(seed, "tree-split", (static_cast<std::uint64_t>(d) << 32) | j);
                auto split = bisect(embeddings, parents[j], rng);
                children.push_back(std::move(split.first));
                children.push_back(std::move(split.second));
            }
        }
    }
    auto& leaves = levels.front();
    for (std::size_t a = 0; a < n; ++a) leaves.push_back({a});
    return ActionTree(std::move(levels));
}

// ---------------------------------------------------------------------------
// PairwiseDistances / NeighborIndex

PairwiseDistances::PairwiseDistances(std::shared_ptr<const EmbeddingTable> embeddings, std::size_t dense_limit)
    : embeddings_(std::move(embeddings)) {
    if (!embeddings_) throw ArgumentError("pairwise distances need embeddings");
    const std::size_t n = embeddings_->n_actions();
    if (n <= dense_limit) {
        dense_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (std::size_t a = 0; a < n; ++a) {
            dense_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) = 0.0;
            for (std::size_t b = a + 1; b < n; ++b) {
                const double d = embeddings_->squared_distance(a, b);
                dense_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d;
                dense_(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = d;
            }
        }
    }
}

Vector PairwiseDistances::row(std::size_t action) const {
    if (action >= n_actions()) throw ArgumentError("action " + std::to_string(action) + " out of range");
    if (is_dense()) return dense_.row(static_cast<Eigen::Index>(action)).transpose();
    const auto& m = embeddings_->matrix();
    return (m.rowwise() - m.row(static_cast<Eigen::Index>(action))).rowwise().squaredNorm();
}

double PairwiseDistances::at(std::size_t a, std::size_t b) const {
    if (is_dense()) return dense_(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    return embeddings_->squared_distance(a, b);
}

std::vector<double> PairwiseDistances::pair_sample(std::size_t max_pairs, std::uint64_t seed) const {
    const std::size_t n = n_actions();
    std::vector<double> out;
    if (n < 2) return out;
    const std::size_t total = n * (n - 1) / 2;
    if (total <= max_pairs) {
        out.reserve(total);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b) out.push_back(at(a, b));
        return out;
    }
    Rng rng = make_rng(seed, "pair-sample");
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    out.reserve(max_pairs);
    while (out.size() < max_pairs) {
        const std::size_t a = pick(rng);
        const std::size_t b = pick(rng);
        if (a != b) out.push_back(at(a, b));
    }
    return out;
}

NeighborIndex::NeighborIndex(const PairwiseDistances& distances, std::size_t k_max)
    : n_actions_(distances.n_actions()), k_max_(std::min(k_max, distances.n_actions())) {
    if (k_max_ == 0) throw ArgumentError("neighbor index needs k_max >= 1");
    ids_.resize(n_actions_ * k_max_);
    std::vector<std::uint32_t> order(n_actions_);
    for (std::size_t a = 0; a < n_actions_; ++a) {
        const Vector d = distances.row(a);
        std::iota(order.begin(), order.end(), 0U);
        auto closer = [&](std::uint32_t x, std::uint32_t y) {
            // self first even if another action shares its embedding
            if (x == a || y == a) return x == a && y != a;
            if (d[x] != d[y]) return d[x] < d[y];
            return x < y;
        };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_max_), order.end(), closer);
        std::copy_n(order.begin(), k_max_, ids_.begin() + static_cast<std::ptrdiff_t>(a * k_max_));
    }
}

std::span<const std::uint32_t> NeighborIndex::neighbors(std::size_t action, std::size_t k) const {
    if (action >= n_actions_) throw ArgumentError("action " + std::to_string(action) + " out of range");
    if (k < 1 || k > k_max_) throw ArgumentError("k = " + std::to_string(k) + " outside [1, " + std::to_string(k_max_) + "]");
    return {ids_.data() + action * k_max_, k};
}

// ---------------------------------------------------------------------------
// SimilarityOperator

SimilarityOperator SimilarityOperator::kernel(std::shared_ptr<const PairwiseDistances> distances, double bandwidth,
                                              bool normalize) {
    if (!distances) throw ArgumentError("kernel operator needs pairwise distances");
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ArgumentError("kernel bandwidth must be positive");
    SimilarityOperator op;
    op.kind_ = ConvolutionKind::kernel;
    op.tau_ = bandwidth;
    op.normalize_ = normalize;
    op.n_actions_ = distances->n_actions();
    const double d = static_cast<double>(distances->embeddings().dim());
    // log of tau^-d (2 pi)^(-d/2): the product of d standard normal densities
    op.log_kernel_scale_ = -d * std::log(bandwidth) - 0.5 * d * std::log(2.0 * std::numbers::pi);
    op.distances_ = std::move(distances);
    return op;
}

SimilarityOperator SimilarityOperator::tree(std::shared_ptr<const ActionTree> tree, int level) {
    if (!tree) throw ArgumentError("tree operator needs a tree");
    if (level < 1 || level > tree->depth()) {
        throw ArgumentError("tree level " + std::to_string(level) + " outside [1, " + std::to_string(tree->depth()) + "]");
    }
    SimilarityOperator op;
    op.kind_ = ConvolutionKind::tree;
    op.tau_ = level;
    op.n_actions_ = tree->n_actions();
    op.identity_ = level == 1;
    op.tree_ = std::move(tree);
    return op;
}

SimilarityOperator SimilarityOperator::ball(std::shared_ptr<const PairwiseDistances> distances, double squared_radius) {
    if (!distances) throw ArgumentError("ball operator needs pairwise distances");
    if (!(squared_radius > 0.0)) throw ArgumentError("ball radius must be positive (an action must lie in its own ball)");
    SimilarityOperator op;
    op.kind_ = ConvolutionKind::ball;
    op.tau_ = squared_radius;
    op.n_actions_ = distances->n_actions();

    auto members = std::make_shared<std::vector<std::vector<std::uint32_t>>>(op.n_actions_);
    bool identity = true;
    for (std::size_t a = 0; a < op.n_actions_; ++a) {
        const Vector d = distances->row(a);
        auto& m = (*members)[a];
        for (std::size_t b = 0; b < op.n_actions_; ++b) {
            if (d[static_cast<Eigen::Index>(b)] < squared_radius) m.push_back(static_cast<std::uint32_t>(b));
        }
        if (m.size() != 1) identity = false;
    }
    op.identity_ = identity;
    op.ball_members_ = std::move(members);
    op.distances_ = std::move(distances);
    return op;
}

SimilarityOperator SimilarityOperator::knn(std::shared_ptr<const NeighborIndex> index, std::size_t k) {
    if (!index) throw ArgumentError("knn operator needs a neighbor index");
    if (k < 1 || k > index->n_actions()) {
        throw ArgumentError("knn k = " + std::to_string(k) + " outside [1, " + std::to_string(index->n_actions()) + "]");
    }
    if (k > index->k_max()) throw ArgumentError("knn k exceeds the neighbor index depth");
    SimilarityOperator op;
    op.kind_ = ConvolutionKind::knn;
    op.tau_ = static_cast<double>(k);
    op.n_actions_ = index->n_actions();
    op.identity_ = k == 1;
    op.neighbors_ = std::move(index);
    return op;
}

void SimilarityOperator::check_action(std::size_t action) const {
    if (action >= n_actions_) throw ArgumentError("action " + std::to_string(action) + " out of range");
}

Vector SimilarityOperator::similarity_row(std::size_t action) const {
    check_action(action);
    Vector out = Vector::Zero(static_cast<Eigen::Index>(n_actions_));
    switch (kind_) {
        case ConvolutionKind::kernel: {
            const Vector d = distances_->row(action);
            const double inv = 1.0 / (2.0 * tau_ * tau_);
            out = (log_kernel_scale_ - d.array() * inv).exp().matrix();
            if (normalize_) out /= out.sum();
            break;
        }
        case ConvolutionKind::tree: {
            const auto& cluster = tree_->cluster_of(static_cast<int>(tau_), action);
            const double w = 1.0 / static_cast<double>(cluster.size());
            for (std::size_t b : cluster) out[static_cast<Eigen::Index>(b)] = w;
            break;
        }
        case ConvolutionKind::ball: {
            const auto& m = (*ball_members_)[action];
            const double w = 1.0 / static_cast<double>(m.size());
            for (auto b : m) out[b] = w;
            break;
        }
        case ConvolutionKind::knn: {
            const auto nb = neighbors_->neighbors(action, static_cast<std::size_t>(tau_));
            const double w = 1.0 / tau_;
            for (auto b : nb) out[b] = w;
            break;
        }
    }
    return out;
}

double SimilarityOperator::convolve(std::span<const double> policy_row, std::size_t action) const {
    check_action(action);
    if (policy_row.size() != n_actions_) {
        throw ArgumentError("policy row has " + std::to_string(policy_row.size()) + " entries, expected " +
                            std::to_string(n_actions_));
    }
    switch (kind_) {
        case ConvolutionKind::kernel: {
            const Vector d = distances_->row(action);
            const double inv = 1.0 / (2.0 * tau_ * tau_);
            double num = 0.0;
            double den = 0.0;
            for (std::size_t b = 0; b < n_actions_; ++b) {
                const double k = std::exp(log_kernel_scale_ - d[static_cast<Eigen::Index>(b)] * inv);
                num += policy_row[b] * k;
                den += k;
            }
            return normalize_ ? num / den : num;
        }
        case ConvolutionKind::tree: {
            const auto& cluster = tree_->cluster_of(static_cast<int>(tau_), action);
            double s = 0.0;
            for (std::size_t b : cluster) s += policy_row[b];
            return s / static_cast<double>(cluster.size());
        }
        case ConvolutionKind::ball: {
            const auto& m = (*ball_members_)[action];
            double s = 0.0;
            for (auto b : m) s += policy_row[b];
            return s / static_cast<double>(m.size());
        }
        case ConvolutionKind::knn: {
            const auto nb = neighbors_->neighbors(action, static_cast<std::size_t>(tau_));
            double s = 0.0;
            for (auto b : nb) s += policy_row[b];
            return s / tau_;
        }
    }
    return 0.0;
}

std::string SimilarityOperator::describe() const {
    std::ostringstream out;
    out << to_string(kind_) << "(tau=" << tau_ << (normalize_ ? ", normalized" : "") << ")";
    return out.str();
}

}  // namespace opelab
