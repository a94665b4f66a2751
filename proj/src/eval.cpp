#include "dssl/eval.hpp"

#include "dssl/errors.hpp"
#include "dssl/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace dssl {

void SplitSpec::validate() const {
    if (train_frac <= 0.0 || val_frac <= 0.0 || test_frac <= 0.0)
        throw UsageError("split: all fractions must be positive");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw UsageError("split: fractions must sum to 1");
}

namespace {

void shuffle_ids(std::vector<std::size_t>& ids, Rng& rng) {
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform_index(i)]);
}

/// Cut a shuffled id list into train/val/test by largest-remainder rounding.
void cut_three(const std::vector<std::size_t>& ids, const SplitSpec& spec, Splits& out) {
    const auto n = static_cast<double>(ids.size());
    const double exact[3] = {spec.train_frac * n, spec.val_frac * n, spec.test_frac * n};
    std::size_t counts[3];
    double remainders[3];
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        counts[i] = static_cast<std::size_t>(std::floor(exact[i]));
        remainders[i] = exact[i] - std::floor(exact[i]);
        assigned += counts[i];
    }
    while (assigned < ids.size()) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (remainders[i] > remainders[best]) best = i;
        ++counts[best];
        remainders[best] = -1.0;
        ++assigned;
    }
    std::size_t at = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) out.train.push_back(ids[at++]);
    for (std::size_t i = 0; i < counts[1]; ++i) out.val.push_back(ids[at++]);
    for (std::size_t i = 0; i < counts[2]; ++i) out.test.push_back(ids[at++]);
}

} // namespace

Splits split_nodes(const std::vector<int>& labels, const SplitSpec& spec) {
    spec.validate();
    int max_label = -1;
    std::vector<std::size_t> labeled;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= 0) {
            labeled.push_back(i);
            max_label = std::max(max_label, labels[i]);
        }
    }
    if (labeled.empty()) throw UsageError("split_nodes: no labeled nodes");

    Splits out;
    Rng rng(spec.seed);

    bool stratify = spec.stratified;
    std::vector<std::vector<std::size_t>> members;
    if (stratify) {
        members.resize(static_cast<std::size_t>(max_label) + 1);
        for (std::size_t i : labeled) members[static_cast<std::size_t>(labels[i])].push_back(i);
        for (const auto& m : members) {
            if (!m.empty() && m.size() < 3) {
                std::fprintf(stderr,
                             "split_nodes: class with %zu members, falling back to a global split\n",
                             m.size());
                stratify = false;
                break;
            }
        }
    }

    out.stratified = stratify;
    if (stratify) {
        for (auto& m : members) {
            if (m.empty()) continue;
            shuffle_ids(m, rng);
            cut_three(m, spec, out);
        }
    } else {
        shuffle_ids(labeled, rng);
        cut_three(labeled, spec, out);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

namespace {

struct ProbeModel {
    std::size_t dim = 0, classes = 0;
    std::vector<double> w; // dim x classes
    std::vector<double> b; // classes
};

double probe_objective(const ProbeModel& m, const Tensor& x, const std::vector<int>& labels,
                       const std::vector<std::size_t>& ids, double lambda,
                       std::vector<double>* grad_w, std::vector<double>* grad_b) {
    const std::size_t d = m.dim, c = m.classes;
    if (grad_w) grad_w->assign(d * c, 0.0);
    if (grad_b) grad_b->assign(c, 0.0);
    double loss = 0.0;
    std::vector<double> logits(c), p(c);
    const auto n = static_cast<double>(ids.size());
    for (std::size_t id : ids) {
        for (std::size_t j = 0; j < c; ++j) {
            double acc = m.b[j];
            for (std::size_t f = 0; f < d; ++f) acc += x.at(id, f) * m.w[f * c + j];
            logits[j] = acc;
        }
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[j] - mx);
        const double lz = std::log(z);
        const auto y = static_cast<std::size_t>(labels[id]);
        loss += -(logits[y] - mx - lz) / n;
        if (grad_w) {
            for (std::size_t j = 0; j < c; ++j) {
                p[j] = std::exp(logits[j] - mx - lz);
                const double gj = (p[j] - (j == y ? 1.0 : 0.0)) / n;
                (*grad_b)[j] += gj;
                for (std::size_t f = 0; f < d; ++f) (*grad_w)[f * c + j] += x.at(id, f) * gj;
            }
        }
    }
    double reg = 0.0;
    for (std::size_t i = 0; i < d * c; ++i) {
        reg += 0.5 * lambda * m.w[i] * m.w[i];
        if (grad_w) (*grad_w)[i] += lambda * m.w[i];
    }
    return loss + reg;
}

ProbeModel train_probe(const Tensor& x, const std::vector<int>& labels,
                       const std::vector<std::size_t>& ids, std::size_t classes, double lambda,
                       const ProbeOptions& opt) {
    ProbeModel m;
    m.dim = x.cols();
    m.classes = classes;
    m.w.assign(m.dim * classes, 0.0);
    m.b.assign(classes, 0.0);

    std::vector<double> gw, gb;
    double step = 1.0;
    double f = probe_objective(m, x, labels, ids, lambda, &gw, &gb);
    for (std::size_t iter = 0; iter < opt.max_iters; ++iter) {
        double gmax = 0.0, gsq = 0.0;
        for (double v : gw) {
            gmax = std::max(gmax, std::abs(v));
            gsq += v * v;
        }
        for (double v : gb) {
            gmax = std::max(gmax, std::abs(v));
            gsq += v * v;
        }
        if (gmax <= opt.grad_tol) break;

        // backtracking line search (Armijo)
        step *= 2.0;
        ProbeModel trial = m;
        double f_trial = 0.0;
        for (int halving = 0; halving < 60; ++halving) {
            for (std::size_t i = 0; i < m.w.size(); ++i) trial.w[i] = m.w[i] - step * gw[i];
            for (std::size_t i = 0; i < m.b.size(); ++i) trial.b[i] = m.b[i] - step * gb[i];
            f_trial = probe_objective(trial, x, labels, ids, lambda, nullptr, nullptr);
            if (f_trial <= f - 1e-4 * step * gsq) break;
            step *= 0.5;
        }
        m = trial;
        f = probe_objective(m, x, labels, ids, lambda, &gw, &gb);
    }
    return m;
}

int probe_predict(const ProbeModel& m, const Tensor& x, std::size_t id) {
    int best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m.classes; ++j) {
        double acc = m.b[j];
        for (std::size_t f = 0; f < m.dim; ++f) acc += x.at(id, f) * m.w[f * m.classes + j];
        if (acc > best_val) {
            best_val = acc;
            best = static_cast<int>(j);
        }
    }
    return best;
}

double probe_accuracy(const ProbeModel& m, const Tensor& x, const std::vector<int>& labels,
                      const std::vector<std::size_t>& ids) {
    if (ids.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t id : ids)
        if (probe_predict(m, x, id) == labels[id]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ids.size());
}

} // namespace

ProbeResult linear_probe(const Tensor& representations, const std::vector<int>& labels,
                         const Splits& splits, const ProbeOptions& options) {
    if (splits.train.empty()) throw UsageError("linear_probe: empty train split");
    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    const auto classes = static_cast<std::size_t>(max_label) + 1;

    bool single_class = true;
    for (std::size_t id : splits.train)
        if (labels[id] != labels[splits.train.front()]) {
            single_class = false;
            break;
        }
    if (single_class) throw UsageError("linear_probe: train split contains a single class");

    ProbeResult result;
    ProbeModel best_model;
    double best_val = -1.0;
    for (double lambda : options.lambda_grid) {
        ProbeModel m = train_probe(representations, labels, splits.train, classes, lambda, options);
        const double val = probe_accuracy(m, representations, labels, splits.val);
        if (val > best_val) {
            best_val = val;
            best_model = m;
            result.chosen_lambda = lambda;
        }
    }
    result.val_accuracy = best_val;
    result.accuracy = probe_accuracy(best_model, representations, labels, splits.test);
    result.test_predictions.reserve(splits.test.size());
    for (std::size_t id : splits.test)
        result.test_predictions.push_back(probe_predict(best_model, representations, id));
    return result;
}

namespace {

double sq_dist(const Tensor& x, std::size_t row, const std::vector<double>& center,
               std::size_t d) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = x.at(row, j) - center[j];
        acc += diff * diff;
    }
    return acc;
}

struct KmeansRun {
    std::vector<std::size_t> assignment;
    double inertia = std::numeric_limits<double>::infinity();
    std::vector<double> inertia_trace;
};

KmeansRun kmeans_once(const Tensor& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<std::vector<double>> centers(k, std::vector<double>(d, 0.0));

    // k-means++ seeding
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    const std::size_t first = rng.uniform_index(n);
    for (std::size_t j = 0; j < d; ++j) centers[0][j] = x.at(first, j);
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dist2[i] = std::min(dist2[i], sq_dist(x, i, centers[c - 1], d));
            total += dist2[i];
        }
        std::size_t chosen = n - 1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dist2[i];
                if (acc >= target) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = rng.uniform_index(n);
        }
        for (std::size_t j = 0; j < d; ++j) centers[c][j] = x.at(chosen, j);
    }

    KmeansRun run;
    run.assignment.assign(n, 0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t iter = 0; iter < 300; ++iter) {
        bool changed = iter == 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = sq_dist(x, i, centers[0], d);
            for (std::size_t c = 1; c < k; ++c) {
                const double dd = sq_dist(x, i, centers[c], d);
                if (dd < best_d) {
                    best_d = dd;
                    best = c;
                }
            }
            if (run.assignment[i] != best) {
                run.assignment[i] = best;
                changed = true;
            }
        }
        {
            double inertia = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                inertia += sq_dist(x, i, centers[run.assignment[i]], d);
            run.inertia_trace.push_back(inertia);
        }
        if (!changed) break;

        for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[run.assignment[i]];
            for (std::size_t j = 0; j < d; ++j) centers[run.assignment[i]][j] += x.at(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (std::size_t j = 0; j < d; ++j)
                    centers[c][j] /= static_cast<double>(counts[c]);
            } else {
                // empty cluster: reseed at the point farthest from its center
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dd = sq_dist(x, i, centers[run.assignment[i]], d);
                    if (dd > far_d) {
                        far_d = dd;
                        far = i;
                    }
                }
                for (std::size_t j = 0; j < d; ++j) centers[c][j] = x.at(far, j);
            }
        }
    }

    run.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) run.inertia += sq_dist(x, i, centers[run.assignment[i]], d);
    return run;
}

} // namespace

KmeansResult kmeans_detailed(const Tensor& representations, std::size_t k, std::uint64_t seed) {
    const std::size_t n = representations.rows();
    if (k == 0) throw UsageError("kmeans: k must be >= 1");
    if (k > n) throw UsageError("kmeans: k exceeds the number of points");

    Rng rng(seed);
    KmeansRun best;
    for (int restart = 0; restart < 10; ++restart) {
        Rng local(rng.fork_seed());
        KmeansRun run = kmeans_once(representations, k, local);
        if (run.inertia < best.inertia) best = run; // ties keep the earlier restart
    }
    return {std::move(best.assignment), best.inertia, std::move(best.inertia_trace)};
}

std::vector<std::size_t> kmeans(const Tensor& representations, std::size_t k, std::uint64_t seed) {
    return kmeans_detailed(representations, k, seed).assignment;
}

double nmi(const std::vector<std::size_t>& pred, const std::vector<int>& truth, NmiNorm norm) {
    if (pred.size() != truth.size()) throw UsageError("nmi: length mismatch");
    std::size_t n = 0;
    std::size_t max_pred = 0;
    int max_truth = -1;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] < 0) continue;
        ++n;
        max_pred = std::max(max_pred, pred[i]);
        max_truth = std::max(max_truth, truth[i]);
    }
    if (n == 0) throw UsageError("nmi: no labeled entries");

    const std::size_t pc = max_pred + 1;
    const auto tc = static_cast<std::size_t>(max_truth) + 1;
    std::vector<double> joint(pc * tc, 0.0), pa(pc, 0.0), pb(tc, 0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] < 0) continue;
        joint[pred[i] * tc + static_cast<std::size_t>(truth[i])] += 1.0;
        pa[pred[i]] += 1.0;
        pb[static_cast<std::size_t>(truth[i])] += 1.0;
    }
    const auto nd = static_cast<double>(n);
    double mi = 0.0, ha = 0.0, hb = 0.0;
    for (std::size_t a = 0; a < pc; ++a)
        if (pa[a] > 0.0) ha -= pa[a] / nd * std::log(pa[a] / nd);
    for (std::size_t b = 0; b < tc; ++b)
        if (pb[b] > 0.0) hb -= pb[b] / nd * std::log(pb[b] / nd);
    for (std::size_t a = 0; a < pc; ++a)
        for (std::size_t b = 0; b < tc; ++b) {
            const double nij = joint[a * tc + b];
            if (nij > 0.0) mi += nij / nd * std::log(nij * nd / (pa[a] * pb[b]));
        }

    if (ha == 0.0 && hb == 0.0) return 1.0; // both constant: identical partitions
    const double denom = norm == NmiNorm::Arithmetic ? 0.5 * (ha + hb) : std::sqrt(ha * hb);
    if (denom == 0.0) return 0.0;
    return std::clamp(mi / denom, 0.0, 1.0);
}

EvalReport evaluate_representations(const Tensor& representations, const std::vector<int>& labels,
                                    const SplitSpec& split_spec) {
    Splits splits = split_nodes(labels, split_spec);
    ProbeResult probe = linear_probe(representations, labels, splits);

    int max_label = -1;
    for (int l : labels) max_label = std::max(max_label, l);
    const auto classes = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::size_t> assignment = kmeans(representations, classes, split_spec.seed);

    EvalReport report;
    report.accuracy = probe.accuracy;
    report.nmi = nmi(assignment, labels);
    report.train_size = splits.train.size();
    report.val_size = splits.val.size();
    report.test_size = splits.test.size();
    report.probe_lambda = probe.chosen_lambda;
    report.seed = split_spec.seed;
    report.representation_checksum = fnv1a_hex(
        representations.data().data(), representations.size() * sizeof(double));
    return report;
}

} // namespace dssl
