#include "dssl/trainer.hpp"

#include "dssl/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dssl {

void TrainConfig::validate() const {
    hyper.validate();
    if (tau < 0.0 || tau > 1.0) throw UsageError("config: tau must be in [0, 1]");
    if (batch_size == 0) throw UsageError("config: batch_size must be >= 1");
    if (neighbors_per_node == 0) throw UsageError("config: neighbors_per_node must be >= 1");
    if (learning_rate < 0.0) throw UsageError("config: learning_rate must be >= 0");
    if (weight_decay < 0.0) throw UsageError("config: weight_decay must be >= 0");
    if (degenerate_reinit_threshold < 0.0)
        throw UsageError("config: degenerate_reinit_threshold must be >= 0");
}

namespace {

struct GroupRef {
    Tensor* tensor;
    bool decay; // weight decay applies
};

std::vector<GroupRef> parameter_groups(ModelParams& p) {
    return {
        {&p.online.w1, true},     {&p.online.w2, true},    {&p.projector.w1, true},
        {&p.projector.b1, false}, {&p.projector.w2, true}, {&p.projector.b2, false},
        {&p.head.w1, true},       {&p.head.b1, false},     {&p.head.w2, true},
        {&p.head.b2, false},      {&p.prototypes.mu, false},
    };
}

void reset_epoch_accumulators(TrainState& s) {
    const std::size_t k = s.params.k, d = s.params.dims.repr_dim;
    s.pi_weighted_v.assign(k * d, 0.0);
    s.pi_weight.assign(k, 0.0);
    s.sum_v.assign(d, 0.0);
    s.sum_v_sq.assign(d, 0.0);
    std::fill(s.node_cluster.begin(), s.node_cluster.end(), -1);
    s.nodes_seen = 0;
}

/// Accumulate Eq.-9 weights and collapse caches for one central node.
void accumulate_node(TrainState& s, std::size_t node, const Tensor& q_node_rows, std::size_t row,
                     const Tensor& v_rows) {
    const std::size_t k = s.params.k, d = s.params.dims.repr_dim;
    std::size_t argmax = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const double pi = q_node_rows.at(row, c);
        if (pi > q_node_rows.at(row, argmax)) argmax = c;
        s.pi_weight[c] += pi;
        for (std::size_t j = 0; j < d; ++j) s.pi_weighted_v[c * d + j] += pi * v_rows.at(row, j);
    }
    for (std::size_t j = 0; j < d; ++j) {
        const double x = v_rows.at(row, j);
        s.sum_v[j] += x;
        s.sum_v_sq[j] += x * x;
    }
    s.node_cluster[node] = static_cast<int>(argmax);
    ++s.nodes_seen;
}

struct FullPass {
    Tensor v;      // N x D'
    Tensor q_node; // N x K
};

/// Encode the whole graph and aggregate the posterior over all true
/// neighbors of every node (isolated nodes fall back to themselves).
FullPass full_graph_pass(const ModelParams& params,
                         const std::shared_ptr<const SparseMatrix>& adjacency, const Graph& g,
                         bool uniform_posterior) {
    FullPass out;
    out.v = encode(params.online, adjacency, g.features);
    Tensor z = encode(params.target, adjacency, g.features);

    std::vector<std::size_t> src, dst, offsets{0};
    src.reserve(g.edges.size() + g.num_nodes);
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        const auto nbrs = g.neighbors(i);
        if (nbrs.empty()) {
            src.push_back(i);
            dst.push_back(i);
        } else {
            for (std::size_t v : nbrs) {
                src.push_back(i);
                dst.push_back(v);
            }
        }
        offsets.push_back(src.size());
    }
    Tensor logits = uniform_posterior
                        ? Tensor::zeros({src.size(), params.k})
                        : inference_logits(params.head, gather_rows(out.v, src),
                                           gather_rows(z, dst), params.dims.combine);
    Tensor q_edge = softmax_rows(logits);

    auto avg = std::make_shared<SparseMatrix>();
    avg->rows = g.num_nodes;
    avg->cols = src.size();
    avg->row_offsets = offsets;
    avg->col_indices.resize(src.size());
    avg->values.resize(src.size());
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
        const double inv = 1.0 / static_cast<double>(offsets[i + 1] - offsets[i]);
        for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) {
            avg->col_indices[e] = e;
            avg->values[e] = inv;
        }
    }
    out.q_node = sparse_dense_matmul(std::shared_ptr<const SparseMatrix>(avg), q_edge);
    return out;
}

} // namespace

TrainState init_train_state(const Graph& g, const TrainConfig& config) {
    config.validate();
    TrainState s;
    s.config = config;
    s.config.dims.feature_dim = g.feature_dim();
    s.params = init_params(s.config.dims, config.hyper.k, config.seed);
    s.adjacency = std::make_shared<const SparseMatrix>(normalized_adjacency(g));
    auto groups = parameter_groups(s.params);
    s.adam.resize(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        s.adam[i].m.assign(groups[i].tensor->size(), 0.0);
        s.adam[i].v.assign(groups[i].tensor->size(), 0.0);
    }
    s.node_cluster.assign(g.num_nodes, -1);
    s.rng = Rng(config.seed ^ 0x5dee5eedULL);
    reset_epoch_accumulators(s);
    return s;
}

StepBatch assemble_batch(TrainState& state, const Graph& g,
                         const std::vector<std::size_t>& central_ids) {
    const std::size_t m = state.config.neighbors_per_node;
    StepBatch b;
    b.central = central_ids;
    b.central_rep.reserve(central_ids.size() * m);
    b.neighbors.reserve(central_ids.size() * m);
    for (std::size_t node : central_ids) {
        if (node >= g.num_nodes) throw UsageError("train_step: node id out of range");
        const auto sampled = sample_neighbors(g, node, m, state.rng);
        for (std::size_t v : sampled) {
            b.central_rep.push_back(node);
            b.neighbors.push_back(v);
        }
    }
    b.gumbel_noise = gumbel_noise_tensor(b.neighbors.size(), state.config.hyper.k, state.rng);
    return b;
}

namespace {

struct ForwardResult {
    Tensor total;
    LossBreakdown breakdown;
    Tensor v_central_values;
    Tensor q_node_values;
};

ForwardResult forward_loss(const TrainState& state, const Graph& g, const StepBatch& batch,
                           ModelParams& tracked, Tape* tape) {
    tracked = state.params;
    if (tape) {
        tracked.online.w1 = tape->leaf(tracked.online.w1);
        tracked.online.w2 = tape->leaf(tracked.online.w2);
        tracked.projector.w1 = tape->leaf(tracked.projector.w1);
        tracked.projector.b1 = tape->leaf(tracked.projector.b1);
        tracked.projector.w2 = tape->leaf(tracked.projector.w2);
        tracked.projector.b2 = tape->leaf(tracked.projector.b2);
        tracked.head.w1 = tape->leaf(tracked.head.w1);
        tracked.head.b1 = tape->leaf(tracked.head.b1);
        tracked.head.w2 = tape->leaf(tracked.head.w2);
        tracked.head.b2 = tape->leaf(tracked.head.b2);
        tracked.prototypes.mu = tape->leaf(tracked.prototypes.mu);
    }

    Tensor v_all = encode(tracked.online, state.adjacency, g.features);
    Tensor z_all = encode(state.params.target, state.adjacency, g.features); // gradient-blocked

    LossBatch lb;
    lb.v_central = gather_rows(v_all, batch.central);
    lb.v_repeated = gather_rows(v_all, batch.central_rep);
    lb.z_neighbors = gather_rows(z_all, batch.neighbors);
    lb.neighbor_avg = make_group_average(batch.central.size(), state.config.neighbors_per_node);
    lb.gumbel_noise = batch.gumbel_noise;

    ForwardResult r;
    auto [total, breakdown] = total_loss(lb, tracked.projector, tracked.head, tracked.prototypes,
                                         state.config.hyper, state.config.dims.combine);
    r.total = total;
    r.breakdown = breakdown;
    r.v_central_values = lb.v_central.detached();
    r.q_node_values = breakdown.q_node_values;
    return r;
}

} // namespace

LossBreakdown evaluate_loss(const TrainState& state, const Graph& g, const StepBatch& batch) {
    ModelParams scratch;
    return forward_loss(state, g, batch, scratch, nullptr).breakdown;
}

LossBreakdown train_step(TrainState& state, const Graph& g, const StepBatch& batch) {
    Tape tape;
    ModelParams tracked;
    ForwardResult fwd = forward_loss(state, g, batch, tracked, &tape);

    if (!std::isfinite(fwd.breakdown.total)) {
        std::ostringstream os;
        os << "non-finite loss at step " << state.step_count << ": local=" << fwd.breakdown.local
           << " global=" << fwd.breakdown.global_term << " entropy=" << fwd.breakdown.entropy;
        throw NumericError(os.str());
    }

    const TrainConfig& c = state.config;
    if (c.learning_rate > 0.0) {
        Gradients grads = tape.backward(fwd.total);
        auto tracked_groups = parameter_groups(tracked);
        auto live_groups = parameter_groups(state.params);
        const auto t = static_cast<double>(state.step_count + 1);
        const double bc1 = 1.0 - std::pow(c.adam_beta1, t);
        const double bc2 = 1.0 - std::pow(c.adam_beta2, t);
        for (std::size_t gi = 0; gi < tracked_groups.size(); ++gi) {
            Tensor grad = grads.at(*tracked_groups[gi].tensor);
            const Tensor& w = *live_groups[gi].tensor;
            std::vector<double> next(w.size());
            AdamSlot& slot = state.adam[gi];
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gval = grad[i];
                if (tracked_groups[gi].decay) gval += c.weight_decay * w[i];
                slot.m[i] = c.adam_beta1 * slot.m[i] + (1.0 - c.adam_beta1) * gval;
                slot.v[i] = c.adam_beta2 * slot.v[i] + (1.0 - c.adam_beta2) * gval * gval;
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                next[i] = w[i] - c.learning_rate * mhat / (std::sqrt(vhat) + c.adam_eps);
            }
            *live_groups[gi].tensor = Tensor(w.shape(), std::move(next));
        }
        // keep the Prototypes invariant after the stochastic update
        state.params.prototypes.mu = l2_normalize_rows(state.params.prototypes.mu);
    }

    if (c.tau < 1.0) ema_update(state.params.target, state.params.online, c.tau);

    for (std::size_t b = 0; b < batch.central.size(); ++b)
        accumulate_node(state, batch.central[b], fwd.q_node_values, b, fwd.v_central_values);

    ++state.step_count;
    return fwd.breakdown;
}

LossBreakdown train_step(TrainState& state, const Graph& g,
                         const std::vector<std::size_t>& central_ids) {
    return train_step(state, g, assemble_batch(state, g, central_ids));
}

void ema_update(EncoderParams& xi, const EncoderParams& theta, double tau) {
    auto blend = [tau](const Tensor& a, const Tensor& b) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = tau * a[i] + (1.0 - tau) * b[i];
        return Tensor(a.shape(), std::move(out));
    };
    xi.w1 = blend(xi.w1, theta.w1);
    xi.w2 = blend(xi.w2, theta.w2);
}

void global_prototype_update(TrainState& state, const Graph& g) {
    const std::size_t k = state.params.k, d = state.params.dims.repr_dim;
    std::vector<double> weighted = state.pi_weighted_v;

    if (state.config.exact_pi) {
        FullPass pass = full_graph_pass(state.params, state.adjacency, g,
                                        state.config.hyper.uniform_posterior);
        weighted.assign(k * d, 0.0);
        for (std::size_t i = 0; i < g.num_nodes; ++i)
            for (std::size_t c = 0; c < k; ++c)
                for (std::size_t j = 0; j < d; ++j)
                    weighted[c * d + j] += pass.q_node.at(i, c) * pass.v.at(i, j);
    }

    std::vector<double> mu(state.params.prototypes.mu.data());
    for (std::size_t c = 0; c < k; ++c) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += weighted[c * d + j] * weighted[c * d + j];
        const double norm = std::sqrt(sq);
        if (norm < state.config.degenerate_reinit_threshold || norm == 0.0) {
            // degenerate prototype: restart at a random unit vector
            double rsq = 0.0;
            std::vector<double> fresh(d);
            for (std::size_t j = 0; j < d; ++j) {
                fresh[j] = state.rng.normal();
                rsq += fresh[j] * fresh[j];
            }
            const double inv = 1.0 / std::max(std::sqrt(rsq), 1e-12);
            for (std::size_t j = 0; j < d; ++j) mu[c * d + j] = fresh[j] * inv;
        } else {
            for (std::size_t j = 0; j < d; ++j) mu[c * d + j] = weighted[c * d + j] / norm;
        }
    }
    state.params.prototypes.mu = Tensor({k, d}, std::move(mu));
    reset_epoch_accumulators(state);
}

CollapseMetrics collapse_metrics(const Tensor& representations,
                                 const std::vector<std::size_t>& cluster_assignments) {
    const std::size_t n = representations.rows(), d = representations.cols();
    if (n < 2) throw UsageError("collapse_metrics: need at least 2 rows");
    CollapseMetrics out;

    // mean pairwise cosine over unit rows: (||sum v||^2 - n) / (n (n - 1))
    std::vector<double> s(d, 0.0), sq(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double x = representations.at(i, j);
            s[j] += x;
            sq[j] += x * x;
        }
    double sum_norm_sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sum_norm_sq += s[j] * s[j];
    const auto nd = static_cast<double>(n);
    out.mean_pairwise_cosine = (sum_norm_sq - nd) / (nd * (nd - 1.0));

    out.per_dim_std.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double mean = s[j] / nd;
        out.per_dim_std[j] = std::sqrt(std::max(sq[j] / nd - mean * mean, 0.0));
    }

    std::vector<char> seen;
    for (std::size_t c : cluster_assignments) {
        if (c >= seen.size()) seen.resize(c + 1, 0);
        seen[c] = 1;
    }
    out.effective_clusters = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
    return out;
}

TrainResult train(const Graph& g, const TrainConfig& config) {
    TrainState state = init_train_state(g, config);
    TrainResult result;

    std::vector<std::size_t> order(g.num_nodes);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();

        // deterministic Fisher-Yates shuffle
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[state.rng.uniform_index(i)]);

        EpochRecord rec;
        rec.epoch = epoch;
        std::size_t steps = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            std::vector<std::size_t> ids(order.begin() + begin, order.begin() + end);
            LossBreakdown parts = train_step(state, g, ids);
            rec.loss_total += parts.total;
            rec.loss_local += parts.local;
            rec.loss_global += parts.global_term;
            rec.entropy += parts.entropy;
            ++steps;
        }
        if (steps > 0) {
            rec.loss_total /= static_cast<double>(steps);
            rec.loss_local /= static_cast<double>(steps);
            rec.loss_global /= static_cast<double>(steps);
            rec.entropy /= static_cast<double>(steps);
        }

        // collapse diagnostics: cached accumulators by default, a fresh
        // full-graph pass on the eval_every cadence
        const bool full = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        if (full) {
            FullPass pass = full_graph_pass(state.params, state.adjacency, g,
                                            state.config.hyper.uniform_posterior);
            std::vector<std::size_t> clusters(g.num_nodes);
            for (std::size_t i = 0; i < g.num_nodes; ++i) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < state.params.k; ++c)
                    if (pass.q_node.at(i, c) > pass.q_node.at(i, best)) best = c;
                clusters[i] = best;
            }
            CollapseMetrics m = collapse_metrics(pass.v, clusters);
            rec.mean_pairwise_cosine = m.mean_pairwise_cosine;
            rec.effective_clusters = m.effective_clusters;
        } else if (state.nodes_seen >= 2) {
            const auto nd = static_cast<double>(state.nodes_seen);
            double sum_norm_sq = 0.0;
            for (double x : state.sum_v) sum_norm_sq += x * x;
            rec.mean_pairwise_cosine = (sum_norm_sq - nd) / (nd * (nd - 1.0));
            std::vector<char> seen(state.params.k, 0);
            for (int c : state.node_cluster)
                if (c >= 0) seen[static_cast<std::size_t>(c)] = 1;
            rec.effective_clusters =
                static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
        }

        if (config.global_update) global_prototype_update(state, g);
        else reset_epoch_accumulators(state);
        ++state.epoch_count;

        rec.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                .count();
        result.log.push_back(rec);
    }

    result.params = state.params;
    return result;
}

Tensor node_posteriors(const ModelParams& params, const Graph& g) {
    auto adj = std::make_shared<const SparseMatrix>(normalized_adjacency(g));
    return full_graph_pass(params, adj, g, false).q_node;
}

} // namespace dssl
