#include "dssl/gae.hpp"

#include "dssl/errors.hpp"

#include <chrono>
#include <cmath>
#include <unordered_set>

namespace dssl {

void GaeConfig::validate() const {
    if (learning_rate < 0.0) throw UsageError("gae config: learning_rate must be >= 0");
    if (negative_samples_per_edge == 0)
        throw UsageError("gae config: negative_samples_per_edge must be >= 1");
}

namespace {

std::vector<std::size_t> firsts(const EdgeBatch& edges) {
    std::vector<std::size_t> out(edges.size());
    for (std::size_t i = 0; i < edges.size(); ++i) out[i] = edges[i].first;
    return out;
}

std::vector<std::size_t> seconds(const EdgeBatch& edges) {
    std::vector<std::size_t> out(edges.size());
    for (std::size_t i = 0; i < edges.size(); ++i) out[i] = edges[i].second;
    return out;
}

/// Row dot products via an all-ones contraction; representations are
/// unit-norm so the exp() below cannot overflow.
Tensor pair_dots(const Tensor& reps, const EdgeBatch& pairs) {
    Tensor vi = gather_rows(reps, firsts(pairs));
    Tensor vj = gather_rows(reps, seconds(pairs));
    return matmul(mul(vi, vj), Tensor::full({reps.cols(), 1}, 1.0));
}

} // namespace

Tensor gae_loss(const Tensor& representations, const EdgeBatch& positives,
                const EdgeBatch& negatives) {
    if (positives.empty()) throw UsageError("gae_loss: no positive pairs");
    // -log sigmoid(d) = log(1 + exp(-d));  -log(1 - sigmoid(d)) = log(1 + exp(d))
    Tensor pos_dots = pair_dots(representations, positives);
    Tensor pos_terms = dssl::log(
        add(dssl::exp(scalar_mul(-1.0, pos_dots)), Tensor::full(pos_dots.shape(), 1.0)));
    Tensor total = sum(pos_terms);
    std::size_t count = positives.size();
    if (!negatives.empty()) {
        Tensor neg_dots = pair_dots(representations, negatives);
        Tensor neg_terms =
            dssl::log(add(dssl::exp(neg_dots), Tensor::full(neg_dots.shape(), 1.0)));
        total = add(total, sum(neg_terms));
        count += negatives.size();
    }
    return scalar_mul(1.0 / static_cast<double>(count), total);
}

EdgeBatch sample_negative_edges(const Graph& g, std::size_t count, Rng& rng) {
    std::unordered_set<std::uint64_t> edge_keys;
    edge_keys.reserve(g.edges.size());
    for (const auto& [u, v] : g.edges) edge_keys.insert(u * g.num_nodes + v);

    EdgeBatch out;
    out.reserve(count);
    const std::size_t max_attempts = 200 * count + 1000;
    std::size_t attempts = 0;
    while (out.size() < count) {
        if (++attempts > max_attempts)
            throw UsageError("sample_negative_edges: graph too dense for negative sampling");
        const std::size_t u = rng.uniform_index(g.num_nodes);
        const std::size_t v = rng.uniform_index(g.num_nodes);
        if (u == v) continue;
        if (edge_keys.count(u * g.num_nodes + v)) continue;
        out.emplace_back(u, v);
    }
    return out;
}

GaeResult train_gae(const Graph& g, const GaeConfig& config) {
    config.validate();
    ModelDims dims = config.dims;
    dims.feature_dim = g.feature_dim();

    // reuse the model initializer so DSSL and the baseline start identically
    ModelParams init = init_params(dims, 1, config.seed);
    EncoderParams enc = init.online;
    auto adj = std::make_shared<const SparseMatrix>(normalized_adjacency(g));
    Rng rng(config.seed ^ 0x6ae5eedULL);

    EdgeBatch positives;
    positives.reserve(g.undirected_edge_count());
    for (const auto& [u, v] : g.edges)
        if (g.directed || u < v) positives.emplace_back(u, v);
    if (positives.empty()) throw UsageError("train_gae: graph has no edges");

    struct Slot {
        std::vector<double> m, v;
    };
    Slot slots[2];
    slots[0].m.assign(enc.w1.size(), 0.0);
    slots[0].v.assign(enc.w1.size(), 0.0);
    slots[1].m.assign(enc.w2.size(), 0.0);
    slots[1].v.assign(enc.w2.size(), 0.0);

    GaeResult result;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        EdgeBatch negatives =
            sample_negative_edges(g, positives.size() * config.negative_samples_per_edge, rng);

        Tape tape;
        EncoderParams tracked{tape.leaf(enc.w1), tape.leaf(enc.w2)};
        Tensor reps = encode(tracked, adj, g.features);
        Tensor loss = gae_loss(reps, positives, negatives);
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw NumericError("gae: non-finite loss at epoch " + std::to_string(epoch));

        if (config.learning_rate > 0.0) {
            Gradients grads = tape.backward(loss);
            Tensor* weights[2] = {&enc.w1, &enc.w2};
            const Tensor* leaves[2] = {&tracked.w1, &tracked.w2};
            const auto t = static_cast<double>(epoch + 1);
            const double bc1 = 1.0 - std::pow(config.adam_beta1, t);
            const double bc2 = 1.0 - std::pow(config.adam_beta2, t);
            for (int s = 0; s < 2; ++s) {
                Tensor grad = grads.at(*leaves[s]);
                const Tensor& w = *weights[s];
                std::vector<double> next(w.size());
                for (std::size_t i = 0; i < w.size(); ++i) {
                    const double gval = grad[i] + config.weight_decay * w[i];
                    slots[s].m[i] = config.adam_beta1 * slots[s].m[i] + (1 - config.adam_beta1) * gval;
                    slots[s].v[i] =
                        config.adam_beta2 * slots[s].v[i] + (1 - config.adam_beta2) * gval * gval;
                    next[i] = w[i] - config.learning_rate * (slots[s].m[i] / bc1) /
                                         (std::sqrt(slots[s].v[i] / bc2) + config.adam_eps);
                }
                *weights[s] = Tensor(w.shape(), std::move(next));
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.loss_total = loss_value;
        rec.loss_local = loss_value;
        {
            const Tensor values = reps.detached();
            std::vector<double> colsum(values.cols(), 0.0);
            for (std::size_t i = 0; i < values.rows(); ++i)
                for (std::size_t j = 0; j < values.cols(); ++j) colsum[j] += values.at(i, j);
            double sum_sq = 0.0;
            for (double x : colsum) sum_sq += x * x;
            const auto n = static_cast<double>(values.rows());
            rec.mean_pairwise_cosine = (sum_sq - n) / (n * (n - 1.0));
        }
        rec.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                .count();
        result.log.push_back(rec);
    }
    result.encoder = enc;
    return result;
}

} // namespace dssl
