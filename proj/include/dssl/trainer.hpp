#pragma once

#include "dssl/graph.hpp"
#include "dssl/loss.hpp"
#include "dssl/model.hpp"

#include <cstdint>
#include <memory>
#include <vector>

namespace dssl {

struct TrainConfig {
    double learning_rate = 5e-3;
    double weight_decay = 5e-4; // weight matrices only; biases and prototypes exempt
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 512;
    std::size_t neighbors_per_node = 5;
    std::size_t epochs = 100;
    double tau = 0.9; // target decay rate
    DsslHyper hyper;
    std::uint64_t seed = 1;
    /// Every eval_every epochs collapse metrics come from a fresh full-graph
    /// pass instead of the cached per-step posteriors. 0 disables full passes.
    std::size_t eval_every = 1;
    double degenerate_reinit_threshold = 1e-8;
    /// Recompute Eq.-9 weights from a full-graph pass at epoch end instead of
    /// the posteriors cached during the epoch.
    bool exact_pi = false;
    /// Epoch-end analytic prototype update (the global update); off = ablation.
    bool global_update = true;
    ModelDims dims; // feature_dim is overwritten from the graph

    void validate() const;
};

struct CollapseMetrics {
    double mean_pairwise_cosine = 0.0;
    std::vector<double> per_dim_std;
    std::size_t effective_clusters = 0;
};

/// Diagnostics for the two collapse modes: identical representations and
/// single-cluster posterior assignment. Rows of `representations` must be
/// unit-norm (encoder output); `cluster_assignments` are q_node argmaxes.
CollapseMetrics collapse_metrics(const Tensor& representations,
                                 const std::vector<std::size_t>& cluster_assignments);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss_total = 0.0;
    double loss_local = 0.0;
    double loss_global = 0.0;
    double entropy = 0.0;
    double mean_pairwise_cosine = 0.0;
    std::size_t effective_clusters = 0;
    double wall_ms = 0.0;
};

struct AdamSlot {
    std::vector<double> m, v;
};

struct TrainState {
    TrainConfig config;
    ModelParams params;
    std::shared_ptr<const SparseMatrix> adjacency;
    std::vector<AdamSlot> adam; // one per parameter group
    std::size_t step_count = 0;
    std::size_t epoch_count = 0;

    // Eq.-9 accumulators and collapse caches, reset every epoch.
    std::vector<double> pi_weighted_v; // K x D' sums of pi_i(k) v_i
    std::vector<double> pi_weight;     // K sums of pi_i(k)
    std::vector<double> sum_v;         // D'
    std::vector<double> sum_v_sq;      // D'
    std::vector<int> node_cluster;     // q_node argmax per node, -1 unseen
    std::size_t nodes_seen = 0;

    Rng rng{1};
};

TrainState init_train_state(const Graph& g, const TrainConfig& config);

/// Sampled ingredients of one step, exposed so tests can replay a batch.
struct StepBatch {
    std::vector<std::size_t> central;
    std::vector<std::size_t> central_rep;
    std::vector<std::size_t> neighbors;
    Tensor gumbel_noise;
};

StepBatch assemble_batch(TrainState& state, const Graph& g,
                         const std::vector<std::size_t>& central_ids);

/// Loss of a batch with the current parameters, no state mutation.
LossBreakdown evaluate_loss(const TrainState& state, const Graph& g, const StepBatch& batch);

/// One optimization step: forward, backward, Adam on {online, head,
/// projector, prototypes}, prototype renormalization, EMA on the target,
/// Eq.-9 accumulator update. Throws NumericError on a non-finite loss.
LossBreakdown train_step(TrainState& state, const Graph& g, const StepBatch& batch);
LossBreakdown train_step(TrainState& state, const Graph& g,
                         const std::vector<std::size_t>& central_ids);

/// xi <- tau xi + (1 - tau) theta, elementwise.
void ema_update(EncoderParams& xi, const EncoderParams& theta, double tau);

/// Epoch-end analytic prototype update: mu_k <- sum_i pi_i(k) v_i,
/// renormalized; near-zero sums reinitialize the row at random.
void global_prototype_update(TrainState& state, const Graph& g);

struct TrainResult {
    ModelParams params; // downstream consumers use params.online
    std::vector<EpochRecord> log;
};

TrainResult train(const Graph& g, const TrainConfig& config);

/// q(k | node) aggregated over all true neighbors of every node, central
/// rows from the online encoder and neighbor rows from the target.
Tensor node_posteriors(const ModelParams& params, const Graph& g);

} // namespace dssl
