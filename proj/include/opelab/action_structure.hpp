#pragma once

#include "opelab/core.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace opelab {

enum class ConvolutionKind { kernel, tree, ball, knn };

std::string_view to_string(ConvolutionKind kind);
ConvolutionKind parse_convolution_kind(std::string_view text);

/// Nested partitions of the action set. Level 1 holds singletons, level D
/// (the root) a single meta-action with every action; each level-k cluster
/// is a union of level-(k-1) clusters.
class ActionTree {
public:
    using Cluster = std::vector<std::size_t>;
    using Level = std::vector<Cluster>;

    /// `levels[0]` is level 1. Throws ArgumentError if the levels are not
    /// nested exact partitions with singleton leaves and a single root.
    explicit ActionTree(std::vector<Level> levels);

    int depth() const { return static_cast<int>(levels_.size()); }
    std::size_t n_actions() const { return n_actions_; }
    const Level& level(int d) const;
    const Cluster& cluster_of(int d, std::size_t action) const;

    /// One line per level starting at level 1: clusters separated by ';',
    /// members by ','.
    std::string to_text() const;
    static ActionTree from_text(std::string_view text);

private:
    std::vector<Level> levels_;
    std::vector<std::vector<std::uint32_t>> membership_;
    std::size_t n_actions_ = 0;
};

/// Largest depth D with 2^(D-1) <= n_actions.
int max_tree_depth(std::size_t n_actions);

/// Recursive bisecting 2-means (k-means++ seeding, 50 Lloyd iterations,
/// best of 4 restarts per node). Nodes with fewer than two actions are
/// copied down unchanged.
ActionTree build_tree(const EmbeddingTable& embeddings, int depth, std::uint64_t seed);

/// Squared Euclidean distances between action embeddings. Kept as a dense
/// matrix up to `dense_limit` actions, otherwise computed per query row.
class PairwiseDistances {
public:
    explicit PairwiseDistances(std::shared_ptr<const EmbeddingTable> embeddings,
                               std::size_t dense_limit = 4096);

    std::size_t n_actions() const { return embeddings_->n_actions(); }
    const EmbeddingTable& embeddings() const { return *embeddings_; }
    bool is_dense() const { return dense_.size() > 0; }

    Vector row(std::size_t action) const;
    double at(std::size_t a, std::size_t b) const;

    /// Squared distances of distinct action pairs: all of them when there are
    /// at most `max_pairs`, otherwise a seeded sample of `max_pairs`.
    std::vector<double> pair_sample(std::size_t max_pairs, std::uint64_t seed) const;

private:
    std::shared_ptr<const EmbeddingTable> embeddings_;
    RowMatrix dense_;
};

/// Per-action neighbor lists sorted by (squared distance, index), truncated
/// to k_max. An action is always its own first neighbor.
class NeighborIndex {
public:
    NeighborIndex(const PairwiseDistances& distances, std::size_t k_max);

    std::size_t n_actions() const { return n_actions_; }
    std::size_t k_max() const { return k_max_; }
    std::span<const std::uint32_t> neighbors(std::size_t action, std::size_t k) const;

private:
    std::size_t n_actions_;
    std::size_t k_max_;
    std::vector<std::uint32_t> ids_;
};

/// A prepared convolution function f_tau over the action embeddings.
///
/// kernel: f(a, a') = tau^-d prod_i K((E(a)_i - E(a')_i) / tau) with K the
///         standard normal density; not normalized unless requested.
/// tree:   uniform weight over the meta-action of `a` at depth tau.
/// ball:   uniform weight over actions with squared distance < tau.
/// knn:    uniform weight over the tau nearest neighbors of `a`.
class SimilarityOperator {
public:
    static SimilarityOperator kernel(std::shared_ptr<const PairwiseDistances> distances, double bandwidth,
                                     bool normalize = false);
    static SimilarityOperator tree(std::shared_ptr<const ActionTree> tree, int level);
    static SimilarityOperator ball(std::shared_ptr<const PairwiseDistances> distances, double squared_radius);
    static SimilarityOperator knn(std::shared_ptr<const NeighborIndex> index, std::size_t k);

    ConvolutionKind kind() const { return kind_; }
    double tau() const { return tau_; }
    bool normalized() const { return normalize_; }
    std::size_t n_actions() const { return n_actions_; }

    /// True when convolution reproduces every policy row exactly.
    bool is_identity() const { return identity_; }

    /// (f_tau(E(a), E(a')))_{a'}
    Vector similarity_row(std::size_t action) const;

    /// sum_{a'} policy_row[a'] * f_tau(E(action), E(a'))
    double convolve(std::span<const double> policy_row, std::size_t action) const;

    std::string describe() const;

private:
    SimilarityOperator() = default;
    void check_action(std::size_t action) const;

    ConvolutionKind kind_ = ConvolutionKind::tree;
    double tau_ = 1.0;
    bool normalize_ = false;
    bool identity_ = false;
    std::size_t n_actions_ = 0;
    double log_kernel_scale_ = 0.0;
    std::shared_ptr<const PairwiseDistances> distances_;
    std::shared_ptr<const ActionTree> tree_;
    std::shared_ptr<const NeighborIndex> neighbors_;
    std::shared_ptr<const std::vector<std::vector<std::uint32_t>>> ball_members_;
};

inline Vector similarity_row(const SimilarityOperator& op, std::size_t action) {
    return op.similarity_row(action);
}

inline double convolve_policy_row(std::span<const double> policy_row, const SimilarityOperator& op,
                                  std::size_t action) {
    return op.convolve(policy_row, action);
}

}  // namespace opelab
