// Command-line front end: dataset generation, graph metrics, training,
// evaluation, and sweep orchestration. Every run writes a manifest, also on
// failure. Exit codes: 0 ok, 2 usage/config error, 3 numerical failure,
// 4 I/O error.

#include "dssl/errors.hpp"
#include "dssl/gae.hpp"
#include "dssl/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

using namespace dssl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct GraphArgs {
    std::string edges, features, labels;
    bool directed = false;

    void attach(CLI::App* cmd, bool labels_required) {
        cmd->add_option("--edges", edges, "edge list file")->required();
        cmd->add_option("--features", features, "feature CSV file");
        auto* lab = cmd->add_option("--labels", labels, "label file");
        if (labels_required) lab->required();
        cmd->add_flag("--directed", directed, "treat edges as directed");
    }

    Graph load(RunManifest& manifest) const {
        manifest.input_checksums["edges"] = fnv1a_file(edges);
        if (!features.empty()) manifest.input_checksums["features"] = fnv1a_file(features);
        if (!labels.empty()) manifest.input_checksums["labels"] = fnv1a_file(labels);
        return load_graph(edges, features, labels, directed);
    }
};

double elapsed_ms(const std::chrono::steady_clock::time_point& start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

/// Run a command body with manifest bookkeeping; the manifest is written on
/// both success and failure.
void run_with_manifest(const std::string& manifest_path, RunManifest& manifest,
                       const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    try {
        body();
        manifest.status = "ok";
        manifest.wall_ms = elapsed_ms(start);
        write_manifest(manifest_path, manifest);
    } catch (const std::exception& e) {
        manifest.status = "failed";
        manifest.error = e.what();
        manifest.wall_ms = elapsed_ms(start);
        try {
            write_manifest(manifest_path, manifest);
        } catch (...) {
            // the original error wins
        }
        throw;
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- config -> typed configs --------------------------------------------------

CombineMode parse_combine(const std::string& s) {
    if (s == "concat") return CombineMode::Concat;
    if (s == "product") return CombineMode::Product;
    throw UsageError("config key 'combine': expected concat|product, got '" + s + "'");
}

LocalMode parse_local_mode(const std::string& s) {
    if (s == "straight_through") return LocalMode::StraightThrough;
    if (s == "soft") return LocalMode::GumbelSoft;
    if (s == "exact") return LocalMode::Exact;
    throw UsageError("config key 'local_mode': expected straight_through|soft|exact, got '" + s +
                     "'");
}

TrainConfig dssl_config_from(ConfigView& cfg) {
    TrainConfig c;
    c.dims.hidden_dim = cfg.get_size("hidden_dim", 64);
    c.dims.repr_dim = cfg.get_size("repr_dim", 32);
    c.dims.proj_hidden = cfg.get_size("proj_hidden", 0);
    c.dims.head_hidden = cfg.get_size("head_hidden", 0);
    c.dims.combine = parse_combine(cfg.get_string("combine", "concat"));
    c.hyper.k = cfg.get_size("k", 8);
    c.hyper.beta = cfg.get_double("beta", 1.0);
    c.hyper.sigma1_sq = cfg.get_double("sigma1_sq", 1.0);
    c.hyper.sigma2_sq = cfg.get_double("sigma2_sq", 1.0);
    c.hyper.gamma = cfg.get_double("gamma", 0.5);
    c.hyper.local_mode = parse_local_mode(cfg.get_string("local_mode", "straight_through"));
    c.hyper.use_local = cfg.get_bool("use_local", true);
    c.hyper.use_global = cfg.get_bool("use_global", true);
    c.hyper.use_entropy = cfg.get_bool("use_entropy", true);
    c.hyper.uniform_posterior = cfg.get_bool("uniform_posterior", false);
    c.learning_rate = cfg.get_double("learning_rate", 5e-3);
    c.weight_decay = cfg.get_double("weight_decay", 5e-4);
    c.adam_beta1 = cfg.get_double("adam_beta1", 0.9);
    c.adam_beta2 = cfg.get_double("adam_beta2", 0.999);
    c.adam_eps = cfg.get_double("adam_eps", 1e-8);
    c.batch_size = cfg.get_size("batch_size", 512);
    c.neighbors_per_node = cfg.get_size("neighbors_per_node", 5);
    c.epochs = cfg.get_size("epochs", 100);
    c.tau = cfg.get_double("tau", 0.9);
    c.seed = cfg.get_u64("seed", 1);
    c.eval_every = cfg.get_size("eval_every", 1);
    c.degenerate_reinit_threshold = cfg.get_double("degenerate_reinit_threshold", 1e-8);
    c.exact_pi = cfg.get_bool("exact_pi", false);
    c.global_update = cfg.get_bool("global_update", true);
    return c;
}

std::map<std::string, std::string> render_dssl_config(const TrainConfig& c) {
    std::map<std::string, std::string> m;
    m["hidden_dim"] = std::to_string(c.dims.hidden_dim);
    m["repr_dim"] = std::to_string(c.dims.repr_dim);
    m["proj_hidden"] = std::to_string(c.dims.proj_hidden);
    m["head_hidden"] = std::to_string(c.dims.head_hidden);
    m["combine"] = c.dims.combine == CombineMode::Concat ? "concat" : "product";
    m["k"] = std::to_string(c.hyper.k);
    m["beta"] = fmt(c.hyper.beta);
    m["sigma1_sq"] = fmt(c.hyper.sigma1_sq);
    m["sigma2_sq"] = fmt(c.hyper.sigma2_sq);
    m["gamma"] = fmt(c.hyper.gamma);
    m["local_mode"] = c.hyper.local_mode == LocalMode::StraightThrough ? "straight_through"
                      : c.hyper.local_mode == LocalMode::GumbelSoft    ? "soft"
                                                                       : "exact";
    m["use_local"] = c.hyper.use_local ? "true" : "false";
    m["use_global"] = c.hyper.use_global ? "true" : "false";
    m["use_entropy"] = c.hyper.use_entropy ? "true" : "false";
    m["uniform_posterior"] = c.hyper.uniform_posterior ? "true" : "false";
    m["learning_rate"] = fmt(c.learning_rate);
    m["weight_decay"] = fmt(c.weight_decay);
    m["adam_beta1"] = fmt(c.adam_beta1);
    m["adam_beta2"] = fmt(c.adam_beta2);
    m["adam_eps"] = fmt(c.adam_eps);
    m["batch_size"] = std::to_string(c.batch_size);
    m["neighbors_per_node"] = std::to_string(c.neighbors_per_node);
    m["epochs"] = std::to_string(c.epochs);
    m["tau"] = fmt(c.tau);
    m["seed"] = std::to_string(c.seed);
    m["eval_every"] = std::to_string(c.eval_every);
    m["degenerate_reinit_threshold"] = fmt(c.degenerate_reinit_threshold);
    m["exact_pi"] = c.exact_pi ? "true" : "false";
    m["global_update"] = c.global_update ? "true" : "false";
    return m;
}

GaeConfig gae_config_from(ConfigView& cfg) {
    GaeConfig c;
    c.dims.hidden_dim = cfg.get_size("hidden_dim", 64);
    c.dims.repr_dim = cfg.get_size("repr_dim", 32);
    c.learning_rate = cfg.get_double("learning_rate", 5e-3);
    c.weight_decay = cfg.get_double("weight_decay", 5e-4);
    c.adam_beta1 = cfg.get_double("adam_beta1", 0.9);
    c.adam_beta2 = cfg.get_double("adam_beta2", 0.999);
    c.adam_eps = cfg.get_double("adam_eps", 1e-8);
    c.epochs = cfg.get_size("epochs", 100);
    c.negative_samples_per_edge = cfg.get_size("negatives_per_edge", 1);
    c.seed = cfg.get_u64("seed", 1);
    return c;
}

std::map<std::string, std::string> render_gae_config(const GaeConfig& c) {
    std::map<std::string, std::string> m;
    m["hidden_dim"] = std::to_string(c.dims.hidden_dim);
    m["repr_dim"] = std::to_string(c.dims.repr_dim);
    m["learning_rate"] = fmt(c.learning_rate);
    m["weight_decay"] = fmt(c.weight_decay);
    m["adam_beta1"] = fmt(c.adam_beta1);
    m["adam_beta2"] = fmt(c.adam_beta2);
    m["adam_eps"] = fmt(c.adam_eps);
    m["epochs"] = std::to_string(c.epochs);
    m["negatives_per_edge"] = std::to_string(c.negative_samples_per_edge);
    m["seed"] = std::to_string(c.seed);
    return m;
}

/// Train one method on a graph and return (trained full params, final loss, log).
struct TrialOutcome {
    ModelParams params;
    std::vector<EpochRecord> log;
    double final_loss = 0.0;
};

TrialOutcome run_dssl(const Graph& g, const TrainConfig& config) {
    TrainResult r = train(g, config);
    TrialOutcome out;
    out.params = r.params;
    out.log = r.log;
    out.final_loss = r.log.empty() ? 0.0 : r.log.back().loss_total;
    return out;
}

TrialOutcome run_gae_method(const Graph& g, const GaeConfig& config) {
    GaeResult r = train_gae(g, config);
    ModelDims dims = config.dims;
    dims.feature_dim = g.feature_dim();
    TrialOutcome out;
    out.params = init_params(dims, 1, config.seed); // head/projector placeholders
    out.params.online = r.encoder;
    out.params.target = r.encoder;
    out.log = r.log;
    out.final_loss = r.log.empty() ? 0.0 : r.log.back().loss_total;
    return out;
}

Tensor encode_full(const ModelParams& params, const Graph& g) {
    auto adj = std::make_shared<const SparseMatrix>(normalized_adjacency(g));
    return encode(params.online, adj, g.features);
}

// ---- subcommand payloads ------------------------------------------------------

struct GenerateArgs {
    SyntheticSpec spec;
    std::string out_dir;
};

void cmd_generate(const GenerateArgs& args) {
    fs::create_directories(args.out_dir);
    RunManifest manifest;
    manifest.command = "generate";
    manifest.seed = args.spec.seed;
    manifest.config = {{"nodes", std::to_string(args.spec.num_nodes)},
                       {"classes", std::to_string(args.spec.class_count)},
                       {"feature_dim", std::to_string(args.spec.feature_dim)},
                       {"homophily", fmt(args.spec.target_edge_homophily)},
                       {"mean_degree", fmt(args.spec.mean_degree)},
                       {"feature_signal", fmt(args.spec.feature_signal)},
                       {"seed", std::to_string(args.spec.seed)}};
    const std::string manifest_path = (fs::path(args.out_dir) / "manifest.json").string();

    run_with_manifest(manifest_path, manifest, [&] {
        Graph g = generate_synthetic(args.spec);
        const double measured = edge_homophily(g);
        const auto edges = (fs::path(args.out_dir) / "edges.txt").string();
        const auto features = (fs::path(args.out_dir) / "features.csv").string();
        const auto labels = (fs::path(args.out_dir) / "labels.txt").string();
        write_edge_file(g, edges);
        write_feature_file(g, features);
        write_label_file(g, labels);
        manifest.config["measured_edge_homophily"] = fmt(measured);
        manifest.outputs = {edges, features, labels};

        json j;
        j["measured_edge_homophily"] = measured;
        j["n_nodes"] = g.num_nodes;
        j["n_edges"] = g.undirected_edge_count();
        j["files"] = manifest.outputs;
        std::cout << j.dump(2) << "\n";
    });
}

struct MetricsArgs {
    GraphArgs graph;
    std::string out_dir = ".";
};

void cmd_metrics(const MetricsArgs& args) {
    fs::create_directories(args.out_dir);
    RunManifest manifest;
    manifest.command = "metrics";
    const std::string manifest_path =
        (fs::path(args.out_dir) / "metrics_manifest.json").string();

    run_with_manifest(manifest_path, manifest, [&] {
        Graph g = args.graph.load(manifest);
        if (!g.has_labels()) throw UsageError("metrics: the graph has no labels");

        json j;
        j["edge_homophily"] = edge_homophily(g);
        j["class_average_homophily"] = class_average_homophily(g);
        auto ccns = cross_class_neighborhood_similarity(g);
        json matrix = json::array();
        for (std::size_t a = 0; a < ccns.class_count; ++a) {
            json row = json::array();
            for (std::size_t b = 0; b < ccns.class_count; ++b) {
                if (ccns.class_defined[a] && ccns.class_defined[b]) row.push_back(ccns.at(a, b));
                else row.push_back(nullptr); // undefined: isolated class
            }
            matrix.push_back(row);
        }
        j["cross_class_similarity"] = matrix;
        j["n_nodes"] = g.num_nodes;
        j["n_edges"] = g.undirected_edge_count();
        j["n_classes"] = g.class_count;
        std::cout << j.dump(2) << "\n";
    });
}

struct TrainArgs {
    GraphArgs graph;
    std::string config_path;
    std::string method = "dssl";
    std::string out_dir;
    std::int64_t seed_override = -1;
};

void cmd_train(const TrainArgs& args) {
    fs::create_directories(args.out_dir);
    RunManifest manifest;
    manifest.command = "train";
    const std::string manifest_path = (fs::path(args.out_dir) / "manifest.json").string();

    run_with_manifest(manifest_path, manifest, [&] {
        manifest.input_checksums["config"] = fnv1a_file(args.config_path);
        Graph g = args.graph.load(manifest);

        auto raw = parse_config_file(args.config_path);
        if (args.seed_override >= 0)
            raw["seed"] = std::to_string(args.seed_override);
        ConfigView cfg(raw);

        TrialOutcome outcome;
        std::map<std::string, std::string> resolved;
        if (args.method == "dssl") {
            TrainConfig config = dssl_config_from(cfg);
            cfg.reject_unknown();
            resolved = render_dssl_config(config);
            manifest.seed = config.seed;
            outcome = run_dssl(g, config);
        } else if (args.method == "gae") {
            GaeConfig config = gae_config_from(cfg);
            cfg.reject_unknown();
            resolved = render_gae_config(config);
            manifest.seed = config.seed;
            outcome = run_gae_method(g, config);
        } else {
            throw UsageError("train: unknown method '" + args.method + "' (expected dssl|gae)");
        }
        resolved["method"] = args.method;
        manifest.config = resolved;

        const std::string config_hash = fnv1a_hex(render_config(resolved).data(),
                                                  render_config(resolved).size());
        const auto ckpt = (fs::path(args.out_dir) / "checkpoint.bin").string();
        const auto log_path = (fs::path(args.out_dir) / "log.jsonl").string();
        save_checkpoint(ckpt, outcome.params, config_hash);
        write_training_log(log_path, outcome.log);
        manifest.outputs = {ckpt, log_path};

        json j;
        j["checkpoint"] = ckpt;
        j["log"] = log_path;
        j["epochs"] = outcome.log.size();
        j["final_loss"] = outcome.final_loss;
        std::cout << j.dump(2) << "\n";
    });
}

struct EvalArgs {
    GraphArgs graph;
    std::string checkpoint;
    std::string reps_csv;
    std::string out_dir = ".";
    double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
    std::uint64_t seed = 1;
    bool geometric_nmi = false;
    std::string dump_reps, dump_posteriors;
};

void cmd_eval(const EvalArgs& args) {
    fs::create_directories(args.out_dir);
    RunManifest manifest;
    manifest.command = "eval";
    manifest.seed = args.seed;
    const std::string manifest_path = (fs::path(args.out_dir) / "eval_manifest.json").string();

    run_with_manifest(manifest_path, manifest, [&] {
        Graph g = args.graph.load(manifest);
        if (!g.has_labels()) throw UsageError("eval: the graph has no labels");

        Tensor reps;
        ModelParams params;
        bool have_params = false;
        if (!args.checkpoint.empty()) {
            manifest.input_checksums["checkpoint"] = fnv1a_file(args.checkpoint);
            Checkpoint ck = load_checkpoint(args.checkpoint);
            if (ck.params.dims.feature_dim != g.feature_dim())
                throw UsageError("eval: checkpoint feature dim " +
                                 std::to_string(ck.params.dims.feature_dim) +
                                 " does not match graph feature dim " +
                                 std::to_string(g.feature_dim()));
            params = ck.params;
            have_params = true;
            reps = encode_full(params, g);
        } else if (!args.reps_csv.empty()) {
            manifest.input_checksums["representations"] = fnv1a_file(args.reps_csv);
            reps = read_representations_csv(args.reps_csv);
            if (reps.rows() != g.num_nodes)
                throw UsageError("eval: representation rows do not match node count");
        } else {
            throw UsageError("eval: provide --checkpoint or --reps-csv");
        }

        SplitSpec spec;
        spec.train_frac = args.train_frac;
        spec.val_frac = args.val_frac;
        spec.test_frac = args.test_frac;
        spec.seed = args.seed;
        EvalReport report = evaluate_representations(reps, g.labels, spec);
        manifest.config = {{"train_frac", fmt(args.train_frac)},
                           {"val_frac", fmt(args.val_frac)},
                           {"test_frac", fmt(args.test_frac)},
                           {"seed", std::to_string(args.seed)}};

        const auto report_path = (fs::path(args.out_dir) / "eval_report.json").string();
        {
            std::ofstream out(report_path);
            if (!out) throw IoError("cannot write " + report_path);
            out << eval_report_json(report) << "\n";
        }
        manifest.outputs.push_back(report_path);

        if (!args.dump_reps.empty()) {
            write_representations_csv(args.dump_reps, reps);
            manifest.outputs.push_back(args.dump_reps);
        }
        if (!args.dump_posteriors.empty()) {
            if (!have_params)
                throw UsageError("eval: --dump-posteriors needs a checkpoint, not a CSV");
            write_posteriors_csv(args.dump_posteriors, node_posteriors(params, g));
            manifest.outputs.push_back(args.dump_posteriors);
        }

        std::cout << eval_report_json(report) << "\n";
    });
}

struct SweepArgs {
    GraphArgs graph;
    bool have_graph = false;
    std::string config_path;
    std::string axis;
    std::vector<double> values;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string out_csv;
    std::string method = "auto"; // dssl | gae | both | auto
};

void cmd_sweep(const SweepArgs& args) {
    if (!args.out_csv.empty()) fs::create_directories(fs::path(args.out_csv).parent_path().empty()
                                                          ? fs::path(".")
                                                          : fs::path(args.out_csv).parent_path());
    RunManifest manifest;
    manifest.command = "sweep";
    const std::string manifest_path = args.out_csv + ".manifest.json";

    run_with_manifest(manifest_path, manifest, [&] {
        static const std::set<std::string> axes{"tau",   "sigma1_sq", "sigma2_sq",
                                                "gamma", "K",         "homophily"};
        if (!axes.count(args.axis))
            throw UsageError("sweep: unknown axis '" + args.axis +
                             "' (expected tau|sigma1_sq|sigma2_sq|gamma|K|homophily)");
        if (args.values.empty()) throw UsageError("sweep: no values given");

        manifest.input_checksums["config"] = fnv1a_file(args.config_path);
        auto raw = parse_config_file(args.config_path);

        // generator settings for the homophily axis
        ConfigView syn_probe(raw);
        SyntheticSpec syn;
        syn.num_nodes = syn_probe.get_size("syn_nodes", 2000);
        syn.class_count = syn_probe.get_size("syn_classes", 5);
        syn.feature_dim = syn_probe.get_size("syn_feature_dim", 16);
        syn.mean_degree = syn_probe.get_double("syn_degree", 12.0);
        syn.feature_signal = syn_probe.get_double("syn_feature_signal", 3.0);

        std::vector<std::string> methods;
        if (args.method == "auto")
            methods = args.axis == "homophily" ? std::vector<std::string>{"dssl", "gae"}
                                               : std::vector<std::string>{"dssl"};
        else if (args.method == "both") methods = {"dssl", "gae"};
        else if (args.method == "dssl" || args.method == "gae") methods = {args.method};
        else throw UsageError("sweep: unknown method '" + args.method + "'");

        Graph base_graph;
        if (args.axis != "homophily") {
            if (!args.have_graph)
                throw UsageError("sweep: axis '" + args.axis + "' needs --edges/--features/--labels");
            base_graph = args.graph.load(manifest);
        }

        std::ofstream csv(args.out_csv);
        if (!csv) throw IoError("cannot write " + args.out_csv);
        csv << "axis,value,seed,accuracy,nmi,loss_final\n";

        struct Agg {
            double acc_sum = 0, acc_sq = 0, nmi_sum = 0, loss_sum = 0;
            std::size_t n = 0;
        };
        std::map<std::pair<std::string, double>, Agg> aggregates;

        for (double value : args.values) {
            for (std::uint64_t seed : args.seeds) {
                Graph trial_graph = base_graph;
                if (args.axis == "homophily") {
                    SyntheticSpec spec = syn;
                    spec.target_edge_homophily = value;
                    spec.seed = seed;
                    trial_graph = generate_synthetic(spec);
                }
                for (const std::string& method : methods) {
                    auto trial_raw = raw;
                    // strip generator keys before method config parsing
                    for (const char* key : {"syn_nodes", "syn_classes", "syn_feature_dim",
                                            "syn_degree", "syn_feature_signal"})
                        trial_raw.erase(key);
                    trial_raw["seed"] = std::to_string(seed);

                    TrialOutcome outcome;
                    if (method == "dssl") {
                        if (args.axis == "tau") trial_raw["tau"] = fmt(value);
                        else if (args.axis == "sigma1_sq") trial_raw["sigma1_sq"] = fmt(value);
                        else if (args.axis == "sigma2_sq") trial_raw["sigma2_sq"] = fmt(value);
                        else if (args.axis == "gamma") trial_raw["gamma"] = fmt(value);
                        else if (args.axis == "K")
                            trial_raw["k"] = std::to_string(static_cast<std::size_t>(value));
                        ConfigView cfg(trial_raw);
                        TrainConfig config = dssl_config_from(cfg);
                        cfg.reject_unknown();
                        outcome = run_dssl(trial_graph, config);
                    } else {
                        // the baseline ignores DSSL-only keys
                        ConfigView cfg(trial_raw);
                        GaeConfig config = gae_config_from(cfg);
                        outcome = run_gae_method(trial_graph, config);
                    }

                    Tensor reps = encode_full(outcome.params, trial_graph);
                    SplitSpec spec;
                    spec.seed = seed;
                    EvalReport report = evaluate_representations(reps, trial_graph.labels, spec);

                    const std::string label =
                        methods.size() > 1 ? args.axis + "/" + method : args.axis;
                    csv << label << "," << fmt(value) << "," << seed << "," << fmt(report.accuracy)
                        << "," << fmt(report.nmi) << "," << fmt(outcome.final_loss) << "\n";
                    Agg& agg = aggregates[{label, value}];
                    agg.acc_sum += report.accuracy;
                    agg.acc_sq += report.accuracy * report.accuracy;
                    agg.nmi_sum += report.nmi;
                    agg.loss_sum += outcome.final_loss;
                    ++agg.n;
                }
            }
        }

        for (const auto& [key, agg] : aggregates) {
            const auto n = static_cast<double>(agg.n);
            csv << key.first << "," << fmt(key.second) << ",agg," << fmt(agg.acc_sum / n) << ","
                << fmt(agg.nmi_sum / n) << "," << fmt(agg.loss_sum / n) << "\n";
            const double var = std::max(agg.acc_sq / n - (agg.acc_sum / n) * (agg.acc_sum / n), 0.0);
            std::fprintf(stderr, "%s value=%g accuracy %.4f +- %.4f over %zu trials\n",
                         key.first.c_str(), key.second, agg.acc_sum / n, std::sqrt(var), agg.n);
        }
        manifest.outputs = {args.out_csv};
        manifest.config = raw;
    });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decoupled self-supervised learning on graphs: data generation, "
                 "homophily metrics, training, evaluation, sweeps"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "write a synthetic labeled graph");
    generate->add_option("--nodes", gen.spec.num_nodes, "node count")->required();
    generate->add_option("--classes", gen.spec.class_count, "class count")->required();
    generate->add_option("--homophily", gen.spec.target_edge_homophily, "target edge homophily")
        ->required();
    generate->add_option("--degree", gen.spec.mean_degree, "mean degree (default 4)");
    generate->add_option("--features", gen.spec.feature_dim, "feature dimension (default 8)");
    generate->add_option("--signal", gen.spec.feature_signal,
                         "class-mean separation (default 1.0)");
    generate->add_option("--seed", gen.spec.seed, "random seed (default 1)");
    generate->add_option("--out", gen.out_dir, "output directory")->required();

    MetricsArgs met;
    auto* metrics = app.add_subcommand("metrics", "homophily and neighborhood metrics as JSON");
    met.graph.attach(metrics, /*labels_required=*/true);
    metrics->add_option("--out", met.out_dir, "manifest directory (default .)");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "train DSSL or the GAE baseline");
    tr.graph.attach(train_cmd, /*labels_required=*/false);
    train_cmd->add_option("--config", tr.config_path, "flat key = value config file")->required();
    train_cmd->add_option("--method", tr.method, "dssl|gae (default dssl)");
    train_cmd->add_option("--out", tr.out_dir, "output directory")->required();
    train_cmd->add_option("--seed", tr.seed_override, "override the config seed");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "linear probe + clustering of representations");
    ev.graph.attach(eval_cmd, /*labels_required=*/true);
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "trained checkpoint");
    eval_cmd->add_option("--reps-csv", ev.reps_csv, "representations CSV instead of a checkpoint");
    eval_cmd->add_option("--out", ev.out_dir, "output directory (default .)");
    eval_cmd->add_option("--train-frac", ev.train_frac, "train fraction (default 0.6)");
    eval_cmd->add_option("--val-frac", ev.val_frac, "validation fraction (default 0.2)");
    eval_cmd->add_option("--test-frac", ev.test_frac, "test fraction (default 0.2)");
    eval_cmd->add_option("--seed", ev.seed, "split/clustering seed (default 1)");
    eval_cmd->add_option("--dump-reps", ev.dump_reps, "write the representation CSV here");
    eval_cmd->add_option("--dump-posteriors", ev.dump_posteriors,
                         "write per-node latent posteriors here");

    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "train+eval across one hyperparameter axis");
    sweep->add_option("--edges", sw.graph.edges, "edge list file");
    sweep->add_option("--features", sw.graph.features, "feature CSV file");
    sweep->add_option("--labels", sw.graph.labels, "label file");
    sweep->add_option("--config", sw.config_path, "base config file")->required();
    sweep->add_option("--axis", sw.axis, "tau|sigma1_sq|sigma2_sq|gamma|K|homophily")->required();
    sweep->add_option("--values", sw.values, "axis values")->required()->delimiter(',');
    sweep->add_option("--seeds", sw.seeds, "seeds per value (default 1,2,3)")->delimiter(',');
    sweep->add_option("--out", sw.out_csv, "output CSV path")->required();
    sweep->add_option("--method", sw.method, "dssl|gae|both (default: both for homophily)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (*generate) cmd_generate(gen);
        if (*metrics) cmd_metrics(met);
        if (*train_cmd) cmd_train(tr);
        if (*eval_cmd) cmd_eval(ev);
        if (*sweep) {
            sw.have_graph = !sw.graph.edges.empty();
            cmd_sweep(sw);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
