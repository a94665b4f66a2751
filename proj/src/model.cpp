#include "dssl/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dssl {

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_in * fan_out);
    for (auto& x : w) x = rng.uniform(-limit, limit);
    return Tensor({fan_in, fan_out}, std::move(w));
}

MlpParams init_mlp(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Rng& rng) {
    MlpParams p;
    p.w1 = glorot(in_dim, hidden, rng);
    p.b1 = Tensor::zeros({1, hidden});
    p.w2 = glorot(hidden, out_dim, rng);
    p.b2 = Tensor::zeros({1, out_dim});
    return p;
}

} // namespace

ModelParams init_params(const ModelDims& dims, std::size_t k, std::uint64_t seed) {
    if (dims.feature_dim == 0 || dims.hidden_dim == 0 || dims.repr_dim == 0)
        throw std::runtime_error("init_params: all dims must be >= 1");
    if (k == 0) throw std::runtime_error("init_params: k must be >= 1");

    Rng rng(seed);
    ModelParams p;
    p.dims = dims;
    p.k = k;
    p.online.w1 = glorot(dims.feature_dim, dims.hidden_dim, rng);
    p.online.w2 = glorot(dims.hidden_dim, dims.repr_dim, rng);
    p.target = p.online; // Alg. 1 starts the target as a copy
    p.projector = init_mlp(k, dims.proj_hidden_or_default(), dims.repr_dim, rng);
    p.head = init_mlp(dims.head_input_dim(), dims.head_hidden_or_default(), k, rng);

    std::vector<double> mu(k * dims.repr_dim);
    for (auto& x : mu) x = rng.normal();
    p.prototypes.mu = l2_normalize_rows(Tensor({k, dims.repr_dim}, std::move(mu)));
    return p;
}

Tensor encode(const EncoderParams& params, const std::shared_ptr<const SparseMatrix>& adj,
              const Tensor& x) {
    Tensor h = relu(sparse_dense_matmul(adj, matmul(x, params.w1)));
    Tensor out = sparse_dense_matmul(adj, matmul(h, params.w2));
    return l2_normalize_rows(out);
}

Tensor mlp_forward(const MlpParams& p, const Tensor& input) {
    Tensor h = add(matmul(input, p.w1), p.b1);
    if (p.activation == MlpActivation::Relu) h = relu(h);
    return add(matmul(h, p.w2), p.b2);
}

Tensor project_latent(const MlpParams& projector, const Tensor& c) {
    return mlp_forward(projector, c);
}

Tensor inference_logits(const MlpParams& head, const Tensor& v, const Tensor& z, CombineMode mode) {
    const Tensor combined = mode == CombineMode::Concat ? concat_rows(v, z) : mul(v, z);
    return mlp_forward(head, combined);
}

} // namespace dssl
