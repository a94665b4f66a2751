#pragma once

#include "dssl/rng.hpp"
#include "dssl/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dssl {

/// Node/edge store with features and optional labels. Immutable after
/// construction; undirected graphs keep each edge in both directions.
struct Graph {
    std::size_t num_nodes = 0;
    bool directed = false;
    /// Directed pairs, lexicographically sorted, deduplicated, no self-loops.
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    Tensor features; // N x D
    /// Class index per node, -1 = unlabeled. Empty when no label file given.
    std::vector<int> labels;
    std::size_t class_count = 0;

    // CSR out-neighbor lists derived from `edges`.
    std::vector<std::size_t> adj_offsets;
    std::vector<std::size_t> adj_targets;

    bool has_labels() const;
    std::size_t degree(std::size_t node) const;
    std::span<const std::size_t> neighbors(std::size_t node) const;
    std::size_t undirected_edge_count() const;
    std::size_t feature_dim() const { return features.cols(); }
};

/// Assemble a graph from an undirected edge list (validated and symmetrized).
Graph make_graph(std::size_t num_nodes,
                 const std::vector<std::pair<std::size_t, std::size_t>>& undirected_edges,
                 Tensor features, std::vector<int> labels, bool directed = false);

/// Text formats: edge list ("u v" per line, '#' comments), feature CSV (one
/// row per node, no header), labels (one class id per line, -1 = unlabeled).
/// Pass an empty label path for an unlabeled graph; empty feature path yields
/// a single zero feature column.
Graph load_graph(const std::string& edge_path, const std::string& feature_path,
                 const std::string& label_path, bool directed = false);

void write_edge_file(const Graph& g, const std::string& path);
void write_feature_file(const Graph& g, const std::string& path);
void write_label_file(const Graph& g, const std::string& path);

/// Symmetric renormalized GCN propagation matrix D^-1/2 (A + I) D^-1/2.
SparseMatrix normalized_adjacency(const Graph& g);

/// Fraction of undirected edges whose endpoints share a label.
double edge_homophily(const Graph& g);

/// Class-average homophily: mean over classes of the clamped excess of
/// class-wise homophily over the class share.
double class_average_homophily(const Graph& g);

/// Cross-class neighborhood similarity: mean cosine similarity of
/// neighbor-label histograms between all node pairs of two classes.
struct NeighborhoodSimilarity {
    std::size_t class_count = 0;
    std::vector<double> matrix;      // C x C row-major; 0 where undefined
    std::vector<bool> class_defined; // false if the class has no usable node
    double at(std::size_t a, std::size_t b) const { return matrix[a * class_count + b]; }
};
NeighborhoodSimilarity cross_class_neighborhood_similarity(const Graph& g);

/// Parameters of the homophily-controlled generator.
struct SyntheticSpec {
    std::size_t num_nodes = 0;
    std::size_t class_count = 2;
    std::size_t feature_dim = 8;
    double target_edge_homophily = 0.5;
    double mean_degree = 4.0;
    double feature_signal = 1.0; // distance between class means
    std::uint64_t seed = 1;
};

/// Labeled random graph whose measured edge homophily tracks the target:
/// each edge is same-class with probability h, endpoints uniform within the
/// chosen class(es); features are per-class Gaussians. Deterministic in seed.
Graph generate_synthetic(const SyntheticSpec& spec);

/// m neighbors sampled uniformly with replacement; isolated nodes fall back
/// to sampling themselves.
std::vector<std::size_t> sample_neighbors(const Graph& g, std::size_t node, std::size_t m, Rng& rng);

} // namespace dssl
