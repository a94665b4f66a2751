#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dssl/loss.hpp"

#include "oracles.hpp"

#include <cmath>

using namespace dssl;

namespace {

Tensor random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.normal();
    return l2_normalize_rows(Tensor({rows, cols}, std::move(v)));
}

MlpParams random_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    auto fill = [&](std::size_t r, std::size_t c) {
        std::vector<double> v(r * c);
        for (auto& x : v) x = rng.uniform(-0.8, 0.8);
        return Tensor({r, c}, std::move(v));
    };
    MlpParams p;
    p.w1 = fill(in, hidden);
    p.b1 = fill(1, hidden);
    p.w2 = fill(hidden, out);
    p.b2 = fill(1, out);
    return p;
}

Prototypes random_prototypes(std::size_t k, std::size_t dim, Rng& rng) {
    return Prototypes{random_unit_rows(k, dim, rng)};
}

struct RandomInstance {
    Tensor v_pairs, z_pairs;
    MlpParams projector, head;
    Prototypes protos;
    DsslHyper hyper;
};

RandomInstance random_instance(Rng& rng, std::size_t pairs = 6, std::size_t dim = 4,
                               std::size_t k = 3) {
    RandomInstance inst;
    inst.v_pairs = random_unit_rows(pairs, dim, rng);
    inst.z_pairs = random_unit_rows(pairs, dim, rng);
    inst.projector = random_mlp(k, dim, dim, rng);
    inst.head = random_mlp(2 * dim, dim, k, rng);
    inst.protos = random_prototypes(k, dim, rng);
    inst.hyper.k = k;
    inst.hyper.beta = 0.5 + rng.uniform();
    inst.hyper.sigma1_sq = 0.4 + rng.uniform();
    inst.hyper.sigma2_sq = 0.4 + rng.uniform();
    inst.hyper.gamma = 0.5;
    return inst;
}

} // namespace

TEST_CASE("posterior_q closed forms") {
    Tensor q = posterior_q(Tensor::row({0.0, 0.0}));
    CHECK(q[0] == doctest::Approx(0.5));

    Tensor q2 = posterior_q(Tensor::row({std::log(3.0), 0.0}));
    CHECK(q2[0] == doctest::Approx(0.75));
    CHECK(q2[1] == doctest::Approx(0.25));

    Tensor q3 = posterior_q(Tensor::row({std::log(3.0) + 7.5, 0.0 + 7.5}));
    CHECK(q3[0] == doctest::Approx(q2[0]).epsilon(1e-12));
}

TEST_CASE("posterior over prototypes: symmetry and closed form") {
    Prototypes protos{Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0})};
    // v equidistant from both prototypes
    Tensor v = l2_normalize_rows(Tensor::row({1.0, 1.0}));
    Tensor p = posterior_p_k_given_v(v, protos, 1.0);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));

    // v = e1: softmax([1, 0])
    Tensor p2 = posterior_p_k_given_v(Tensor::row({1.0, 0.0}), protos, 1.0);
    CHECK(p2[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(p2[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
}

TEST_CASE("softmax shortcut equals the full Gaussian Bayes rule for unit inputs") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(5), dim = 3 + rng.uniform_index(4);
        Prototypes protos = random_prototypes(k, dim, rng);
        Tensor v = random_unit_rows(1, dim, rng);
        Tensor fast = posterior_p_k_given_v(v, protos, 0.7);
        auto slow = oracle::bayes_log_prior_posterior(oracle::row_of(v, 0), protos, 0.7);
        for (std::size_t i = 0; i < k; ++i)
            CHECK(fast[i] == doctest::Approx(std::exp(slow[i])).epsilon(1e-12));
    }
}

TEST_CASE("gumbel sampling: simplex, low-temperature limit, frequencies") {
    Rng rng(3);
    Tensor logits = Tensor::row({0.5, -0.3, 1.2});

    Tensor soft = gumbel_sample(logits, 0.7, gumbel_noise_tensor(1, 3, rng), false);
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(soft[i] >= 0.0);
        total += soft[i];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    Tensor frozen = gumbel_sample(logits, 0.01, Tensor::zeros({1, 3}), false);
    CHECK(frozen[2] > 0.999);

    // hard-sample frequencies approximate softmax(logits) within 2% absolute
    const std::size_t draws = 100000;
    std::vector<double> counts(3, 0.0);
    for (std::size_t i = 0; i < draws; ++i) {
        Tensor hard = gumbel_sample(logits, 0.5, gumbel_noise_tensor(1, 3, rng), true);
        for (std::size_t c = 0; c < 3; ++c) counts[c] += hard[c];
    }
    Tensor expect = softmax_rows(logits);
    for (std::size_t c = 0; c < 3; ++c)
        CHECK(std::abs(counts[c] / draws - expect[c]) < 0.02);
}

TEST_CASE("straight-through sample is one-hot forward with soft gradients") {
    Rng rng(9);
    Tape tape;
    Tensor logits = tape.var({2, 3}, {0.1, 0.9, -0.2, 1.4, 0.0, 0.3});
    Tensor c = gumbel_sample(logits, 0.5, gumbel_noise_tensor(2, 3, rng), true);
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK((c.at(r, k) == 0.0 || c.at(r, k) == 1.0));
            s += c.at(r, k);
        }
        CHECK(s == 1.0);
    }
    Tensor g = tape.backward(sum(mul(c, c))).at(logits);
    bool any_nonzero = false;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g[i] != 0.0) any_nonzero = true;
    CHECK(any_nonzero);
}

TEST_CASE("local loss closed forms") {
    MlpParams zero_proj;
    zero_proj.w1 = Tensor::zeros({2, 2});
    zero_proj.b1 = Tensor::zeros({1, 2});
    zero_proj.w2 = Tensor::zeros({2, 2});
    zero_proj.b2 = Tensor::zeros({1, 2});
    Tensor c = Tensor::row({1.0, 0.0});

    Tensor v = Tensor::row({1.0, 0.0});
    CHECK(local_loss(v, v, c, zero_proj, 0.0).item() == 0.0);

    Tensor z = Tensor::row({0.0, 1.0});
    CHECK(local_loss(v, z, c, zero_proj, 0.0).item() == doctest::Approx(2.0));

    // projector emitting exactly z - v zeroes the loss at beta = 1
    MlpParams proj = zero_proj;
    proj.b2 = Tensor::row({-1.0, 1.0});
    CHECK(local_loss(v, z, c, proj, 1.0).item() == doctest::Approx(0.0));
}

TEST_CASE("global loss: degenerate K and symmetric case") {
    Tensor v = l2_normalize_rows(Tensor::row({1.0, 1.0}));

    Prototypes one{Tensor({1, 2}, {1.0, 0.0})};
    CHECK(global_loss(Tensor::row({1.0}), v, one, 1.0, 0.7).item() == doctest::Approx(0.0));

    Prototypes two{Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0})};
    const double got = global_loss(Tensor::row({0.5, 0.5}), v, two, 1.0, 0.7).item();
    CHECK(got == doctest::Approx(-0.7 * std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("global loss exact sum matches a Gumbel Monte-Carlo estimate") {
    Rng rng(17);
    const std::size_t k = 4, dim = 3;
    Prototypes protos = random_prototypes(k, dim, rng);
    Tensor v = random_unit_rows(1, dim, rng);
    std::vector<double> qv{0.4, 0.3, 0.2, 0.1};
    Tensor q_node({1, k}, qv);
    const double sigma1 = 0.8, sigma2 = 0.9;
    const double exact = global_loss(q_node, v, protos, sigma1, sigma2).item();

    // sample k ~ q via Gumbel argmax over log q, average the log-softmax term
    Tensor scores = scalar_mul(1.0 / sigma1, matmul(v, transpose(protos.mu)));
    Tensor log_post = log_softmax_rows(scores);
    std::vector<double> log_q(k);
    for (std::size_t i = 0; i < k; ++i) log_q[i] = std::log(qv[i]);
    const std::size_t samples = 10000;
    double acc = 0.0, acc_sq = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        std::size_t best = 0;
        double best_val = -1e300;
        for (std::size_t i = 0; i < k; ++i) {
            const double val = log_q[i] + rng.gumbel();
            if (val > best_val) {
                best_val = val;
                best = i;
            }
        }
        const double draw = -sigma2 * log_post[best];
        acc += draw;
        acc_sq += draw * draw;
    }
    const double mc = acc / samples;
    const double var = std::max(acc_sq / samples - mc * mc, 0.0);
    const double se = std::sqrt(var / samples);
    CHECK(std::abs(mc - exact) <= 3.0 * se + 1e-12);
}

TEST_CASE("entropy closed forms and bound") {
    CHECK(entropy_term(Tensor::row({0.25, 0.25, 0.25, 0.25})) == doctest::Approx(std::log(4.0)));
    CHECK(entropy_term(Tensor::row({0.0, 1.0, 0.0})) == 0.0);

    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = 2 + rng.uniform_index(6);
        std::vector<double> logits(k);
        for (auto& x : logits) x = rng.uniform(-3, 3);
        Tensor q = softmax_rows(Tensor({1, k}, logits));
        const double h = entropy_term(q);
        CHECK(h >= 0.0);
        CHECK(h <= std::log(static_cast<double>(k)) + 1e-12);
        CHECK(entropy_from_logits(Tensor({1, k}, logits)).item() == doctest::Approx(h).epsilon(1e-12));
    }
}

namespace {

LossBatch batch_from(const RandomInstance& inst, std::size_t groups, std::size_t group_size,
                     Rng& rng) {
    LossBatch b;
    std::vector<std::size_t> central_ids(groups);
    std::vector<std::size_t> rep_ids(groups * group_size);
    for (std::size_t i = 0; i < groups; ++i) {
        central_ids[i] = i;
        for (std::size_t j = 0; j < group_size; ++j) rep_ids[i * group_size + j] = i;
    }
    b.v_central = gather_rows(inst.v_pairs, central_ids);
    b.v_repeated = gather_rows(inst.v_pairs, rep_ids);
    b.z_neighbors = gather_rows(inst.z_pairs, rep_ids); // arbitrary fixture rows
    b.neighbor_avg = make_group_average(groups, group_size);
    b.gumbel_noise = gumbel_noise_tensor(groups * group_size, inst.hyper.k, rng);
    return b;
}

} // namespace

TEST_CASE("total loss: components recombine exactly and K=1 degenerates") {
    Rng rng(23);
    RandomInstance inst = random_instance(rng);
    LossBatch b = batch_from(inst, 3, 2, rng);
    auto [total, parts] = total_loss(b, inst.projector, inst.head, inst.protos, inst.hyper);
    CHECK(parts.total == (parts.local + parts.global_term) - parts.entropy);
    CHECK(parts.batch_edges == 6);

    // K = 1, beta = 0: plain neighbor reconstruction
    RandomInstance one = random_instance(rng, 4, 3, 1);
    one.hyper.beta = 0.0;
    one.projector = random_mlp(1, 3, 3, rng);
    one.head = random_mlp(6, 3, 1, rng);
    LossBatch b1 = batch_from(one, 2, 2, rng);
    auto [total1, parts1] = total_loss(b1, one.projector, one.head, one.protos, one.hyper);
    CHECK(parts1.global_term == 0.0);
    CHECK(parts1.entropy == 0.0);
    const double expect = mean(squared_row_norms(sub(b1.v_repeated, b1.z_neighbors))).item();
    CHECK(total1.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ablation switches zero out the corresponding terms") {
    Rng rng(29);
    RandomInstance inst = random_instance(rng);
    LossBatch b = batch_from(inst, 3, 2, rng);

    DsslHyper h = inst.hyper;
    h.use_local = false;
    auto [t1, p1] = total_loss(b, inst.projector, inst.head, inst.protos, h);
    CHECK(p1.local == 0.0);

    h = inst.hyper;
    h.use_global = false;
    auto [t2, p2] = total_loss(b, inst.projector, inst.head, inst.protos, h);
    CHECK(p2.global_term == 0.0);

    h = inst.hyper;
    h.uniform_posterior = true;
    auto [t3, p3] = total_loss(b, inst.projector, inst.head, inst.protos, h);
    CHECK(p3.entropy == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("straight-through training loss has finite gradients across temperatures") {
    Rng rng(41);
    for (double gamma : {0.1, 0.5, 1.0}) {
        for (int trial = 0; trial < 34; ++trial) {
            RandomInstance inst = random_instance(rng);
            inst.hyper.gamma = gamma;
            Tape tape;
            MlpParams proj = inst.projector, head = inst.head;
            proj.w1 = tape.leaf(proj.w1);
            proj.w2 = tape.leaf(proj.w2);
            head.w1 = tape.leaf(head.w1);
            head.w2 = tape.leaf(head.w2);
            Prototypes protos{tape.leaf(inst.protos.mu)};
            Tape vt; // track v through a separate leaf on the same tape
            (void)vt;
            Tensor v_leaf = tape.leaf(inst.v_pairs);
            LossBatch b;
            std::vector<std::size_t> rep{0, 0, 1, 1, 2, 2};
            b.v_central = gather_rows(v_leaf, {0, 1, 2});
            b.v_repeated = gather_rows(v_leaf, rep);
            b.z_neighbors = gather_rows(inst.z_pairs, rep);
            b.neighbor_avg = make_group_average(3, 2);
            b.gumbel_noise = gumbel_noise_tensor(6, inst.hyper.k, rng);
            auto [total, parts] = total_loss(b, proj, head, protos, inst.hyper);
            auto grads = tape.backward(total);
            for (const Tensor* leaf : {&proj.w1, &proj.w2, &head.w1, &head.w2, &protos.mu, &v_leaf}) {
                Tensor g = grads.at(*leaf);
                for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::isfinite(g[i]));
            }
        }
    }
}

TEST_CASE("negative ELBO dominates the brute-force marginal, tight at the Bayes posterior") {
    Rng rng(53);
    for (int trial = 0; trial < 50; ++trial) {
        RandomInstance inst = random_instance(rng, 5, 3, 3);
        auto g_table = oracle::projector_table(inst.projector, inst.hyper.k);

        // arbitrary q from the head
        Tensor logits = inference_logits(inst.head, inst.v_pairs, inst.z_pairs, CombineMode::Concat);
        Tensor log_q = log_softmax_rows(logits);
        const double neg_elbo =
            exact_negative_elbo(inst.v_pairs, inst.z_pairs, log_q, inst.projector, inst.protos,
                                inst.hyper)
                .item();

        double neg_log_marginal = 0.0;
        std::vector<double> bayes_rows;
        for (std::size_t p = 0; p < inst.v_pairs.rows(); ++p) {
            const auto v = oracle::row_of(inst.v_pairs, p);
            const auto z = oracle::row_of(inst.z_pairs, p);
            neg_log_marginal -= oracle::log_marginal(v, z, g_table, inst.protos, inst.hyper);
            auto post = oracle::exact_log_posterior(v, z, g_table, inst.protos, inst.hyper);
            bayes_rows.insert(bayes_rows.end(), post.begin(), post.end());
        }
        neg_log_marginal /= static_cast<double>(inst.v_pairs.rows());
        CHECK(neg_elbo >= neg_log_marginal - 1e-10);

        // Jensen is tight when q is the exact posterior
        Tensor bayes_log_q({inst.v_pairs.rows(), inst.hyper.k}, bayes_rows);
        const double tight =
            exact_negative_elbo(inst.v_pairs, inst.z_pairs, bayes_log_q, inst.projector, inst.protos,
                                inst.hyper)
                .item();
        CHECK(tight == doctest::Approx(neg_log_marginal).epsilon(1e-10));
    }
}

TEST_CASE("rescaled training loss reproduces the exact negative ELBO gradients") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        RandomInstance inst = random_instance(rng, 4, 3, 3);
        const double s2_true = inst.hyper.sigma2_sq;

        auto build = [&](Tape& tape, MlpParams& proj, MlpParams& head, Prototypes& protos,
                         Tensor& v_leaf) {
            proj = inst.projector;
            head = inst.head;
            proj.w1 = tape.leaf(proj.w1);
            proj.b1 = tape.leaf(proj.b1);
            proj.w2 = tape.leaf(proj.w2);
            proj.b2 = tape.leaf(proj.b2);
            head.w1 = tape.leaf(head.w1);
            head.b1 = tape.leaf(head.b1);
            head.w2 = tape.leaf(head.w2);
            head.b2 = tape.leaf(head.b2);
            protos.mu = tape.leaf(inst.protos.mu);
            v_leaf = tape.leaf(inst.v_pairs);
        };

        // route 1: exact negative ELBO scaled by 2 sigma2^2
        Tape t1;
        MlpParams proj1, head1;
        Prototypes protos1;
        Tensor v1;
        build(t1, proj1, head1, protos1, v1);
        Tensor logits1 = inference_logits(head1, v1, inst.z_pairs, CombineMode::Concat);
        Tensor elbo = exact_negative_elbo(v1, inst.z_pairs, log_softmax_rows(logits1), proj1,
                                          protos1, inst.hyper);
        Tensor route1 = scalar_mul(2.0 * s2_true, elbo);
        auto g1 = t1.backward(route1);

        // route 2: Eq.5-style loss with sigma2^2 -> 2 sigma2^2 and the entropy
        // coefficient rescaled to 2 sigma2^2
        Tape t2;
        MlpParams proj2, head2;
        Prototypes protos2;
        Tensor v2;
        build(t2, proj2, head2, protos2, v2);
        Tensor logits2 = inference_logits(head2, v2, inst.z_pairs, CombineMode::Concat);
        Tensor q2 = softmax_rows(logits2);
        Tensor local = local_loss_exact(v2, inst.z_pairs, q2, proj2, inst.hyper.beta);
        Tensor glob = global_loss(q2, v2, protos2, inst.hyper.sigma1_sq, 2.0 * s2_true);
        Tensor ent = entropy_from_logits(logits2);
        Tensor route2 = add(add(local, glob), scalar_mul(-2.0 * s2_true, ent));
        auto g2 = t2.backward(route2);

        auto compare = [&](const Tensor& leaf1, const Tensor& leaf2) {
            Tensor a = g1.at(leaf1), b = g2.at(leaf2);
            double max_abs = 1e-12, max_diff = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                max_abs = std::max({max_abs, std::abs(a[i]), std::abs(b[i])});
                max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
            }
            CHECK(max_diff / max_abs < 1e-8);
        };
        compare(proj1.w1, proj2.w1);
        compare(proj1.w2, proj2.w2);
        compare(head1.w1, head2.w1);
        compare(head1.w2, head2.w2);
        compare(v1, v2);

        // Prototype gradients agree on the tangent space of the unit sphere;
        // the full-Gaussian route keeps the -||mu||^2 score term that the
        // softmax shortcut treats as constant, so the two differ by an
        // exactly radial component (irrelevant under row renormalization).
        {
            Tensor a = g1.at(protos1.mu), b = g2.at(protos2.mu);
            const Tensor& mu = inst.protos.mu;
            const std::size_t k = mu.rows(), dim = mu.cols();
            double max_abs = 1e-12, max_tan_diff = 0.0, max_offradial = 0.0;
            for (std::size_t r = 0; r < k; ++r) {
                double da = 0.0, db = 0.0, musq = 0.0;
                for (std::size_t c = 0; c < dim; ++c) {
                    da += a.at(r, c) * mu.at(r, c);
                    db += b.at(r, c) * mu.at(r, c);
                    musq += mu.at(r, c) * mu.at(r, c);
                }
                for (std::size_t c = 0; c < dim; ++c) {
                    const double ta = a.at(r, c) - mu.at(r, c) * da / musq;
                    const double tb = b.at(r, c) - mu.at(r, c) * db / musq;
                    max_tan_diff = std::max(max_tan_diff, std::abs(ta - tb));
                    max_abs = std::max({max_abs, std::abs(ta), std::abs(tb)});
                    // the raw difference itself must be parallel to mu_k
                    const double raw = a.at(r, c) - b.at(r, c);
                    const double radial = mu.at(r, c) * (da - db) / musq;
                    max_offradial = std::max(max_offradial, std::abs(raw - radial));
                }
            }
            CHECK(max_tan_diff / max_abs < 1e-8);
            CHECK(max_offradial < 1e-10);
        }
    }
}
