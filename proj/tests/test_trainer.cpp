#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dssl/trainer.hpp"

#include <cmath>

using namespace dssl;

namespace {

Graph small_graph(std::uint64_t seed = 5, std::size_t n = 30) {
    SyntheticSpec spec;
    spec.num_nodes = n;
    spec.class_count = 3;
    spec.mean_degree = 4;
    spec.target_edge_homophily = 0.4;
    spec.feature_dim = 4;
    spec.feature_signal = 2.0;
    spec.seed = seed;
    return generate_synthetic(spec);
}

TrainConfig small_config() {
    TrainConfig c;
    c.dims.hidden_dim = 8;
    c.dims.repr_dim = 6;
    c.hyper.k = 3;
    c.batch_size = 16;
    c.neighbors_per_node = 3;
    c.epochs = 2;
    c.seed = 7;
    return c;
}

bool same_data(const Tensor& a, const Tensor& b) { return a.data() == b.data(); }

} // namespace

TEST_CASE("ema_update endpoints and blend") {
    EncoderParams xi{Tensor::zeros({2, 2}), Tensor::zeros({2, 2})};
    EncoderParams theta{Tensor::full({2, 2}, 1.0), Tensor::full({2, 2}, 1.0)};

    EncoderParams frozen = xi;
    ema_update(frozen, theta, 1.0);
    CHECK(frozen.w1.data() == std::vector<double>(4, 0.0));

    EncoderParams copied = xi;
    ema_update(copied, theta, 0.0);
    CHECK(copied.w1.data() == std::vector<double>(4, 1.0));

    EncoderParams blended = xi;
    ema_update(blended, theta, 0.9);
    for (std::size_t i = 0; i < 4; ++i) CHECK(blended.w1[i] == doctest::Approx(0.1));
}

TEST_CASE("zero learning rate and tau=1 leave the state untouched except counters") {
    Graph g = small_graph();
    TrainConfig c = small_config();
    c.learning_rate = 0.0;
    c.tau = 1.0;
    TrainState s = init_train_state(g, c);
    const ModelParams before = s.params;
    const auto moments_before = s.adam;

    train_step(s, g, std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(s.step_count == 1);
    CHECK(same_data(s.params.online.w1, before.online.w1));
    CHECK(same_data(s.params.online.w2, before.online.w2));
    CHECK(same_data(s.params.target.w1, before.target.w1));
    CHECK(same_data(s.params.head.w1, before.head.w1));
    CHECK(same_data(s.params.prototypes.mu, before.prototypes.mu));
    for (std::size_t i = 0; i < s.adam.size(); ++i) {
        CHECK(s.adam[i].m == moments_before[i].m);
        CHECK(s.adam[i].v == moments_before[i].v);
    }
}

TEST_CASE("tau=0 copies the online encoder into the target after the step") {
    Graph g = small_graph();
    TrainConfig c = small_config();
    c.tau = 0.0;
    TrainState s = init_train_state(g, c);
    train_step(s, g, std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    CHECK(same_data(s.params.target.w1, s.params.online.w1));
    CHECK(same_data(s.params.target.w2, s.params.online.w2));
}

TEST_CASE("target encoder never changes while tau=1 training runs") {
    Graph g = small_graph();
    TrainConfig c = small_config();
    c.tau = 1.0;
    c.epochs = 3;
    TrainResult r = train(g, c);
    const ModelParams fresh = init_params(
        [&] {
            ModelDims d = c.dims;
            d.feature_dim = g.feature_dim();
            return d;
        }(),
        c.hyper.k, c.seed);
    CHECK(same_data(r.params.target.w1, fresh.target.w1));
    CHECK(same_data(r.params.target.w2, fresh.target.w2));
    CHECK(!same_data(r.params.online.w1, fresh.online.w1)); // online did move
}

TEST_CASE("single-step descent on a fixed batch, 20 seeds") {
    Graph g = small_graph(11);
    int descents = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        TrainConfig c = small_config();
        c.seed = seed;
        c.learning_rate = 1e-3;
        c.weight_decay = 0.0;
        TrainState s = init_train_state(g, c);
        StepBatch batch = assemble_batch(s, g, {0, 1, 2, 3, 4, 5, 6, 7});
        const double before = evaluate_loss(s, g, batch).total;
        train_step(s, g, batch);
        const double after = evaluate_loss(s, g, batch).total;
        if (after <= before + 1e-12) ++descents;
    }
    CHECK(descents >= 18);
}

TEST_CASE("prototype rows stay unit-norm through steps and the global update") {
    Graph g = small_graph();
    TrainConfig c = small_config();
    TrainState s = init_train_state(g, c);
    for (int step = 0; step < 3; ++step) {
        train_step(s, g, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
        const Tensor& mu = s.params.prototypes.mu;
        for (std::size_t r = 0; r < mu.rows(); ++r) {
            double sq = 0.0;
            for (std::size_t j = 0; j < mu.cols(); ++j) sq += mu.at(r, j) * mu.at(r, j);
            CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
        }
    }
    global_prototype_update(s, g);
    const Tensor& mu = s.params.prototypes.mu;
    for (std::size_t r = 0; r < mu.rows(); ++r) {
        double sq = 0.0;
        for (std::size_t j = 0; j < mu.cols(); ++j) sq += mu.at(r, j) * mu.at(r, j);
        CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
    }
}

TEST_CASE("global prototype update: closed form, degenerate path, optimality") {
    Graph g = small_graph();
    TrainConfig c = small_config();
    c.hyper.k = 2;
    TrainState s = init_train_state(g, c);
    const std::size_t d = s.params.dims.repr_dim;

    SUBCASE("single accumulated vector becomes the normalized prototype") {
        std::vector<double> v(d, 0.0);
        v[0] = 3.0;
        v[1] = 4.0;
        std::fill(s.pi_weighted_v.begin(), s.pi_weighted_v.end(), 0.0);
        for (std::size_t j = 0; j < d; ++j) s.pi_weighted_v[j] = v[j]; // factor 0
        s.pi_weighted_v[d + 2] = 1.0;                                  // factor 1, arbitrary
        global_prototype_update(s, g);
        CHECK(s.params.prototypes.mu.at(0, 0) == doctest::Approx(0.6));
        CHECK(s.params.prototypes.mu.at(0, 1) == doctest::Approx(0.8));
    }

    SUBCASE("near-zero weighted sum takes the reinitialization path") {
        std::fill(s.pi_weighted_v.begin(), s.pi_weighted_v.end(), 0.0);
        s.pi_weighted_v[d + 0] = 1.0; // factor 1 fine, factor 0 degenerate
        global_prototype_update(s, g);
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            sq += s.params.prototypes.mu.at(0, j) * s.params.prototypes.mu.at(0, j);
        CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9); // random unit vector
    }

    SUBCASE("analytic update beats random unit vectors on the sphere objective") {
        Rng rng(99);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> weighted(d);
            for (auto& x : weighted) x = rng.normal();
            std::fill(s.pi_weighted_v.begin(), s.pi_weighted_v.end(), 0.0);
            for (std::size_t j = 0; j < d; ++j) s.pi_weighted_v[j] = weighted[j];
            s.pi_weighted_v[d] = 1.0;
            global_prototype_update(s, g);
            double best = 0.0;
            for (std::size_t j = 0; j < d; ++j) best += weighted[j] * s.params.prototypes.mu.at(0, j);
            for (int comp = 0; comp < 1000; ++comp) {
                std::vector<double> u(d);
                double sq = 0.0;
                for (auto& x : u) {
                    x = rng.normal();
                    sq += x * x;
                }
                double obj = 0.0;
                for (std::size_t j = 0; j < d; ++j) obj += weighted[j] * u[j] / std::sqrt(sq);
                CHECK(obj < best);
            }
        }
    }
}

TEST_CASE("training is deterministic under a fixed seed") {
    Graph g = small_graph(3);
    TrainConfig c = small_config();
    c.epochs = 2;
    TrainResult a = train(g, c);
    TrainResult b = train(g, c);
    CHECK(same_data(a.params.online.w1, b.params.online.w1));
    CHECK(same_data(a.params.online.w2, b.params.online.w2));
    CHECK(same_data(a.params.prototypes.mu, b.params.prototypes.mu));
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i)
        CHECK(a.log[i].loss_total == b.log[i].loss_total);
}

TEST_CASE("zero epochs returns the initialized parameters and an empty log") {
    Graph g = small_graph();
    TrainConfig c = small_config();
    c.epochs = 0;
    TrainResult r = train(g, c);
    CHECK(r.log.empty());
    ModelDims dims = c.dims;
    dims.feature_dim = g.feature_dim();
    const ModelParams fresh = init_params(dims, c.hyper.k, c.seed);
    CHECK(same_data(r.params.online.w1, fresh.online.w1));
}

TEST_CASE("per-epoch log carries losses and collapse diagnostics") {
    Graph g = small_graph();
    TrainConfig c = small_config();
    c.epochs = 3;
    TrainResult r = train(g, c);
    REQUIRE(r.log.size() == 3);
    for (const auto& rec : r.log) {
        CHECK(std::isfinite(rec.loss_total));
        CHECK(rec.loss_total == doctest::Approx(rec.loss_local + rec.loss_global - rec.entropy));
        CHECK(rec.mean_pairwise_cosine <= 1.0 + 1e-9);
        CHECK(rec.mean_pairwise_cosine >= -1.0 - 1e-9);
        CHECK(rec.effective_clusters >= 1);
        CHECK(rec.effective_clusters <= c.hyper.k);
        CHECK(rec.wall_ms >= 0.0);
    }
}

TEST_CASE("collapse metrics closed forms") {
    Tensor identical({3, 2}, {1, 0, 1, 0, 1, 0});
    CollapseMetrics same = collapse_metrics(identical, {0, 0, 0});
    CHECK(same.mean_pairwise_cosine == doctest::Approx(1.0));
    CHECK(same.effective_clusters == 1);

    Tensor ortho = Tensor::identity(3);
    CollapseMetrics o = collapse_metrics(ortho, {0, 1, 2});
    CHECK(o.mean_pairwise_cosine == doctest::Approx(0.0));
    CHECK(o.effective_clusters == 3);
    CHECK(o.per_dim_std.size() == 3);
}

TEST_CASE("exact and cached pi modes both keep training healthy") {
    Graph g = small_graph(21);
    TrainConfig c = small_config();
    c.epochs = 2;
    c.exact_pi = true;
    TrainResult exact = train(g, c);
    c.exact_pi = false;
    TrainResult cached = train(g, c);
    CHECK(std::isfinite(exact.log.back().loss_total));
    CHECK(std::isfinite(cached.log.back().loss_total));
}

TEST_CASE("node posteriors are valid distributions") {
    Graph g = small_graph(31);
    TrainConfig c = small_config();
    c.epochs = 1;
    TrainResult r = train(g, c);
    Tensor q = node_posteriors(r.params, g);
    REQUIRE(q.rows() == g.num_nodes);
    for (std::size_t i = 0; i < q.rows(); ++i) {
        double total = 0.0;
        for (std::size_t k = 0; k < q.cols(); ++k) {
            CHECK(q.at(i, k) >= 0.0);
            total += q.at(i, k);
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
}
