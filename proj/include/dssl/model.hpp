#pragma once

#include "dssl/graph.hpp"
#include "dssl/rng.hpp"
#include "dssl/tensor.hpp"

#include <cstdint>
#include <memory>

namespace dssl {

/// How the inference head combines central and neighbor representations.
enum class CombineMode { Concat, Product };

enum class MlpActivation { Relu, Identity };

/// Two-layer graph convolution weights (no biases).
struct EncoderParams {
    Tensor w1; // D x H
    Tensor w2; // H x D'
};

/// Single-hidden-layer perceptron, used for both the latent projector and
/// the inference head.
struct MlpParams {
    Tensor w1, b1, w2, b2;
    MlpActivation activation = MlpActivation::Relu;
};

/// Trainable cluster centers, rows unit-norm.
struct Prototypes {
    Tensor mu; // K x D'
};

struct ModelDims {
    std::size_t feature_dim = 0;
    std::size_t hidden_dim = 64;
    std::size_t repr_dim = 32;
    std::size_t proj_hidden = 0; // 0: defaults to repr_dim
    std::size_t head_hidden = 0; // 0: defaults to repr_dim
    CombineMode combine = CombineMode::Concat;

    std::size_t proj_hidden_or_default() const { return proj_hidden ? proj_hidden : repr_dim; }
    std::size_t head_hidden_or_default() const { return head_hidden ? head_hidden : repr_dim; }
    std::size_t head_input_dim() const {
        return combine == CombineMode::Concat ? 2 * repr_dim : repr_dim;
    }
};

struct ModelParams {
    ModelDims dims;
    std::size_t k = 0;
    EncoderParams online;
    EncoderParams target; // tracks online by EMA, never sees gradients
    MlpParams projector;  // K -> D'
    MlpParams head;       // head_input_dim -> K
    Prototypes prototypes;
};

/// Glorot-uniform weights, zero biases, target initialized equal to online,
/// prototypes Gaussian rows normalized to unit length. Deterministic in seed.
ModelParams init_params(const ModelDims& dims, std::size_t k, std::uint64_t seed);

/// Two-layer GCN forward: relu(A (X W1)), then A (H W2), then row-wise L2
/// normalization. Rows of the result are the node representations.
Tensor encode(const EncoderParams& params, const std::shared_ptr<const SparseMatrix>& adj,
              const Tensor& x);

Tensor mlp_forward(const MlpParams& p, const Tensor& input);

/// Embed a latent assignment (soft vector or one-hot rows) into
/// representation space.
Tensor project_latent(const MlpParams& projector, const Tensor& c);

/// Raw logits of the variational head; softmax is applied by the caller.
Tensor inference_logits(const MlpParams& head, const Tensor& v, const Tensor& z, CombineMode mode);

} // namespace dssl
