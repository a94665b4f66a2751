#include "dssl/graph.hpp"

#include "dssl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace dssl {

namespace {

[[noreturn]] void parse_fail(const std::string& file, std::size_t line, const std::string& msg) {
    throw std::runtime_error(file + ":" + std::to_string(line) + ": " + msg);
}

bool blank_or_comment(const std::string& s) {
    for (char c : s) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

std::uint64_t pair_key(std::size_t a, std::size_t b, std::size_t n) {
    return static_cast<std::uint64_t>(a) * n + b;
}

void build_adjacency(Graph& g) {
    std::sort(g.edges.begin(), g.edges.end());
    g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
    g.adj_offsets.assign(g.num_nodes + 1, 0);
    for (const auto& e : g.edges) ++g.adj_offsets[e.first + 1];
    for (std::size_t i = 0; i < g.num_nodes; ++i) g.adj_offsets[i + 1] += g.adj_offsets[i];
    g.adj_targets.resize(g.edges.size());
    std::vector<std::size_t> cursor(g.adj_offsets.begin(), g.adj_offsets.end() - 1);
    for (const auto& e : g.edges) g.adj_targets[cursor[e.first]++] = e.second;
}

void derive_class_count(Graph& g) {
    int max_label = -1;
    for (int l : g.labels) max_label = std::max(max_label, l);
    g.class_count = max_label >= 0 ? static_cast<std::size_t>(max_label) + 1 : 0;
}

} // namespace

bool Graph::has_labels() const {
    for (int l : labels)
        if (l >= 0) return true;
    return false;
}

std::size_t Graph::degree(std::size_t node) const {
    return adj_offsets[node + 1] - adj_offsets[node];
}

std::span<const std::size_t> Graph::neighbors(std::size_t node) const {
    return {adj_targets.data() + adj_offsets[node], degree(node)};
}

std::size_t Graph::undirected_edge_count() const {
    if (directed) return edges.size();
    return edges.size() / 2;
}

Graph make_graph(std::size_t num_nodes,
                 const std::vector<std::pair<std::size_t, std::size_t>>& undirected_edges,
                 Tensor features, std::vector<int> labels, bool directed) {
    Graph g;
    g.num_nodes = num_nodes;
    g.directed = directed;
    if (features.defined() && features.rows() != num_nodes)
        throw std::runtime_error("feature rows (" + std::to_string(features.rows()) +
                                 ") do not match node count (" + std::to_string(num_nodes) + ")");
    g.features = features.defined() ? features : Tensor::zeros({num_nodes, 1});
    if (!labels.empty() && labels.size() != num_nodes)
        throw std::runtime_error("label count does not match node count");
    g.labels = std::move(labels);
    derive_class_count(g);

    g.edges.reserve(undirected_edges.size() * (directed ? 1 : 2));
    for (const auto& [u, v] : undirected_edges) {
        if (u >= num_nodes || v >= num_nodes)
            throw std::runtime_error("edge endpoint out of range: (" + std::to_string(u) + ", " +
                                     std::to_string(v) + ") with " + std::to_string(num_nodes) +
                                     " nodes");
        if (u == v) continue; // self-loops only enter via normalization
        g.edges.emplace_back(u, v);
        if (!directed) g.edges.emplace_back(v, u);
    }
    build_adjacency(g);
    return g;
}

Graph load_graph(const std::string& edge_path, const std::string& feature_path,
                 const std::string& label_path, bool directed) {
    // Features first: they fix N.
    std::vector<double> feat_data;
    std::size_t n_nodes = 0, feat_dim = 0;
    if (!feature_path.empty()) {
        std::ifstream in(feature_path);
        if (!in) throw std::runtime_error("cannot open feature file: " + feature_path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (blank_or_comment(line)) continue;
            std::size_t row_dim = 0;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) {
                try {
                    feat_data.push_back(std::stod(cell));
                } catch (const std::exception&) {
                    parse_fail(feature_path, lineno, "cannot parse feature value '" + cell + "'");
                }
                ++row_dim;
            }
            if (row_dim == 0) parse_fail(feature_path, lineno, "empty feature row");
            if (feat_dim == 0)
                feat_dim = row_dim;
            else if (row_dim != feat_dim)
                parse_fail(feature_path, lineno,
                           "ragged feature row: expected " + std::to_string(feat_dim) +
                               " values, got " + std::to_string(row_dim));
            ++n_nodes;
        }
        if (n_nodes == 0) throw std::runtime_error(feature_path + ": no feature rows");
    }

    std::vector<int> labels;
    if (!label_path.empty()) {
        std::ifstream in(label_path);
        if (!in) throw std::runtime_error("cannot open label file: " + label_path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (blank_or_comment(line)) continue;
            try {
                std::size_t pos = 0;
                const int v = std::stoi(line, &pos);
                while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
                if (pos != line.size()) throw std::invalid_argument("trailing characters");
                if (v < -1) throw std::invalid_argument("negative class id");
                labels.push_back(v);
            } catch (const std::exception&) {
                parse_fail(label_path, lineno, "unknown label token '" + line + "'");
            }
        }
        if (n_nodes == 0)
            n_nodes = labels.size();
        else if (labels.size() != n_nodes)
            throw std::runtime_error(label_path + ": " + std::to_string(labels.size()) +
                                     " labels for " + std::to_string(n_nodes) + " nodes");
    }

    std::vector<std::pair<std::size_t, std::size_t>> raw_edges;
    {
        std::ifstream in(edge_path);
        if (!in) throw std::runtime_error("cannot open edge file: " + edge_path);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (blank_or_comment(line)) continue;
            std::istringstream ss(line);
            long long u = -1, v = -1;
            std::string extra;
            if (!(ss >> u >> v) || (ss >> extra))
                parse_fail(edge_path, lineno, "expected exactly two node ids, got '" + line + "'");
            if (u < 0 || v < 0) parse_fail(edge_path, lineno, "negative node id");
            if (n_nodes == 0) { // no features or labels: infer N from edges
                n_nodes = std::max(n_nodes, static_cast<std::size_t>(std::max(u, v)) + 1);
            } else if (static_cast<std::size_t>(u) >= n_nodes ||
                       static_cast<std::size_t>(v) >= n_nodes) {
                parse_fail(edge_path, lineno,
                           "edge endpoint exceeds node count " + std::to_string(n_nodes));
            }
            raw_edges.emplace_back(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
        }
    }
    if (n_nodes == 0) throw std::runtime_error(edge_path + ": empty graph");

    Tensor features;
    if (feat_dim > 0) features = Tensor({n_nodes, feat_dim}, std::move(feat_data));
    return make_graph(n_nodes, raw_edges, std::move(features), std::move(labels), directed);
}

void write_edge_file(const Graph& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& [u, v] : g.edges)
        if (g.directed || u < v) out << u << " " << v << "\n";
}

void write_feature_file(const Graph& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char buf[64];
    const std::size_t d = g.feature_dim();
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", g.features.at(i, j));
            out << (j ? "," : "") << buf;
        }
        out << "\n";
    }
}

void write_label_file(const Graph& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (std::size_t i = 0; i < g.num_nodes; ++i)
        out << (g.labels.empty() ? -1 : g.labels[i]) << "\n";
}

SparseMatrix normalized_adjacency(const Graph& g) {
    const std::size_t n = g.num_nodes;
    // Symmetrize for directed graphs; undirected storage is symmetric already.
    std::vector<std::vector<std::size_t>> nbrs(n);
    for (const auto& [u, v] : g.edges) {
        nbrs[u].push_back(v);
        if (g.directed) nbrs[v].push_back(u);
    }
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& list = nbrs[i];
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
        inv_sqrt_deg[i] = 1.0 / std::sqrt(static_cast<double>(list.size()) + 1.0);
    }

    SparseMatrix m;
    m.rows = m.cols = n;
    m.row_offsets.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) m.row_offsets[i + 1] = m.row_offsets[i] + nbrs[i].size() + 1;
    m.col_indices.reserve(m.row_offsets.back());
    m.values.reserve(m.row_offsets.back());
    for (std::size_t i = 0; i < n; ++i) {
        bool self_emitted = false;
        auto emit_self = [&] {
            m.col_indices.push_back(i);
            m.values.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[i]);
            self_emitted = true;
        };
        for (std::size_t j : nbrs[i]) {
            if (!self_emitted && j > i) emit_self();
            m.col_indices.push_back(j);
            m.values.push_back(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
        if (!self_emitted) emit_self();
    }
    return m;
}

double edge_homophily(const Graph& g) {
    if (!g.has_labels()) throw std::runtime_error("edge_homophily: graph has no labels");
    std::size_t total = 0, same = 0;
    for (const auto& [u, v] : g.edges) {
        if (!g.directed && u > v) continue; // count undirected edges once
        if (g.labels[u] < 0 || g.labels[v] < 0) continue;
        ++total;
        if (g.labels[u] == g.labels[v]) ++same;
    }
    if (total == 0) throw std::runtime_error("edge_homophily: no labeled edges");
    return static_cast<double>(same) / static_cast<double>(total);
}

double class_average_homophily(const Graph& g) {
    if (!g.has_labels()) throw std::runtime_error("class_average_homophily: graph has no labels");
    const std::size_t c = g.class_count;
    if (c < 2) throw std::runtime_error("class_average_homophily: needs at least two classes");

    std::vector<double> deg_total(c, 0.0), deg_same(c, 0.0);
    std::vector<std::size_t> class_size(c, 0);
    std::size_t labeled = 0;
    for (std::size_t u = 0; u < g.num_nodes; ++u) {
        if (g.labels[u] < 0) continue;
        ++labeled;
        const auto ku = static_cast<std::size_t>(g.labels[u]);
        ++class_size[ku];
        for (std::size_t v : g.neighbors(u)) {
            if (g.labels[v] < 0) continue;
            deg_total[ku] += 1.0;
            if (g.labels[v] == g.labels[u]) deg_same[ku] += 1.0;
        }
    }

    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        const double hk = deg_total[k] > 0.0 ? deg_same[k] / deg_total[k] : 0.0;
        const double share = static_cast<double>(class_size[k]) / static_cast<double>(labeled);
        acc += std::max(hk - share, 0.0);
    }
    return acc / static_cast<double>(c - 1);
}

NeighborhoodSimilarity cross_class_neighborhood_similarity(const Graph& g) {
    if (!g.has_labels())
        throw std::runtime_error("cross_class_neighborhood_similarity: graph has no labels");
    const std::size_t c = g.class_count;
    const std::size_t n = g.num_nodes;

    // Unit-normalized neighbor-label histograms; nodes with no labeled
    // neighbor are excluded from the averages.
    std::vector<double> hist(n * c, 0.0);
    std::vector<std::vector<std::size_t>> members(c);
    for (std::size_t u = 0; u < n; ++u) {
        if (g.labels[u] < 0) continue;
        double* h = hist.data() + u * c;
        double sq = 0.0;
        for (std::size_t v : g.neighbors(u))
            if (g.labels[v] >= 0) h[g.labels[v]] += 1.0;
        for (std::size_t k = 0; k < c; ++k) sq += h[k] * h[k];
        if (sq == 0.0) continue;
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t k = 0; k < c; ++k) h[k] *= inv;
        members[static_cast<std::size_t>(g.labels[u])].push_back(u);
    }

    NeighborhoodSimilarity out;
    out.class_count = c;
    out.matrix.assign(c * c, 0.0);
    out.class_defined.assign(c, false);
    for (std::size_t k = 0; k < c; ++k) out.class_defined[k] = !members[k].empty();

    for (std::size_t a = 0; a < c; ++a) {
        if (!out.class_defined[a]) continue;
        for (std::size_t b = a; b < c; ++b) {
            if (!out.class_defined[b]) continue;
            double acc = 0.0;
            for (std::size_t i : members[a]) {
                const double* hi = hist.data() + i * c;
                for (std::size_t j : members[b]) {
                    const double* hj = hist.data() + j * c;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < c; ++k) dot += hi[k] * hj[k];
                    acc += dot;
                }
            }
            const double mean =
                acc / (static_cast<double>(members[a].size()) * static_cast<double>(members[b].size()));
            out.matrix[a * c + b] = mean;
            out.matrix[b * c + a] = mean;
        }
    }
    return out;
}

Graph generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_nodes < 2) throw UsageError("synthetic spec: need at least 2 nodes");
    if (spec.class_count < 2) throw UsageError("synthetic spec: need at least 2 classes");
    if (spec.mean_degree < 1.0) throw UsageError("synthetic spec: mean_degree must be >= 1");
    if (spec.target_edge_homophily < 0.0 || spec.target_edge_homophily > 1.0)
        throw UsageError("synthetic spec: homophily must be in [0, 1]");
    if (spec.feature_dim == 0) throw UsageError("synthetic spec: feature_dim must be >= 1");
    if (spec.feature_signal < 0.0) throw UsageError("synthetic spec: feature_signal must be >= 0");

    Rng rng(spec.seed);
    const std::size_t n = spec.num_nodes;
    const std::size_t c = spec.class_count;

    std::vector<int> labels(n);
    std::vector<std::vector<std::size_t>> members(c);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng.uniform_index(c));
        members[static_cast<std::size_t>(labels[i])].push_back(i);
    }

    // Class means form a centered simplex on orthogonal axes (or random
    // directions when the feature space is too small): zero sum, pairwise
    // distance = feature_signal. Centering keeps the class signal out of the
    // graph-wide common mode.
    const std::size_t d = spec.feature_dim;
    std::vector<std::vector<double>> means(c, std::vector<double>(d, 0.0));
    const double scale = spec.feature_signal / std::sqrt(2.0);
    for (std::size_t k = 0; k < c; ++k) {
        if (c <= d) {
            means[k][k] = scale;
        } else {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                means[k][j] = rng.normal();
                sq += means[k][j] * means[k][j];
            }
            const double inv = scale / std::max(std::sqrt(sq), 1e-12);
            for (std::size_t j = 0; j < d; ++j) means[k][j] *= inv;
        }
    }
    if (c <= d) {
        const double shift = scale / static_cast<double>(c);
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t j = 0; j < c; ++j) means[k][j] -= shift;
    }

    std::vector<std::size_t> big_classes, nonempty_classes;
    for (std::size_t k = 0; k < c; ++k) {
        if (members[k].size() >= 2) big_classes.push_back(k);
        if (!members[k].empty()) nonempty_classes.push_back(k);
    }

    const auto target =
        static_cast<std::size_t>(std::ceil(static_cast<double>(n) * spec.mean_degree / 2.0));
    std::unordered_set<std::uint64_t> seen;
    std::vector<std::pair<std::size_t, std::size_t>> edge_list;
    edge_list.reserve(target);
    const std::size_t max_attempts = 200 * target + 1000;
    std::size_t attempts = 0;
    while (edge_list.size() < target) {
        if (++attempts > max_attempts)
            throw UsageError(
                "synthetic spec infeasible: could not place " + std::to_string(target) +
                " edges at homophily " + std::to_string(spec.target_edge_homophily));
        std::size_t u, v;
        if (rng.uniform() < spec.target_edge_homophily) {
            if (big_classes.empty())
                throw UsageError(
                    "synthetic spec infeasible: same-class edges requested but no class has 2 nodes");
            const auto& pool = members[big_classes[rng.uniform_index(big_classes.size())]];
            u = pool[rng.uniform_index(pool.size())];
            v = pool[rng.uniform_index(pool.size())];
            if (u == v) continue;
        } else {
            if (nonempty_classes.size() < 2)
                throw UsageError(
                    "synthetic spec infeasible: cross-class edges requested but only one class present");
            const std::size_t a = nonempty_classes[rng.uniform_index(nonempty_classes.size())];
            std::size_t b = a;
            while (b == a) b = nonempty_classes[rng.uniform_index(nonempty_classes.size())];
            u = members[a][rng.uniform_index(members[a].size())];
            v = members[b][rng.uniform_index(members[b].size())];
        }
        const std::size_t lo = std::min(u, v), hi = std::max(u, v);
        if (!seen.insert(pair_key(lo, hi, n)).second) continue;
        edge_list.emplace_back(lo, hi);
    }

    std::vector<double> feat(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& m = means[static_cast<std::size_t>(labels[i])];
        for (std::size_t j = 0; j < d; ++j) feat[i * d + j] = m[j] + rng.normal();
    }

    return make_graph(n, edge_list, Tensor({n, d}, std::move(feat)), std::move(labels));
}

std::vector<std::size_t> sample_neighbors(const Graph& g, std::size_t node, std::size_t m, Rng& rng) {
    if (m == 0) throw std::runtime_error("sample_neighbors: m must be >= 1");
    std::vector<std::size_t> out(m);
    const auto nbrs = g.neighbors(node);
    if (nbrs.empty()) {
        std::fill(out.begin(), out.end(), node); // declared self-fallback
        return out;
    }
    for (std::size_t i = 0; i < m; ++i) out[i] = nbrs[rng.uniform_index(nbrs.size())];
    return out;
}

} // namespace dssl
