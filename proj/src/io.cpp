#include "dssl/io.hpp"

#include "dssl/errors.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dssl {

using nlohmann::json;

std::string fnv1a_hex(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string content = ss.str();
    return fnv1a_hex(content.data(), content.size());
}

// ---- checkpoint --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'S', 'S', 'L', 'C', 'K', 'P', '1'};

struct NamedArray {
    const char* name;
    const Tensor* tensor;
};

std::vector<NamedArray> checkpoint_arrays(const ModelParams& p) {
    return {
        {"online.w1", &p.online.w1},       {"online.w2", &p.online.w2},
        {"target.w1", &p.target.w1},       {"target.w2", &p.target.w2},
        {"projector.w1", &p.projector.w1}, {"projector.b1", &p.projector.b1},
        {"projector.w2", &p.projector.w2}, {"projector.b2", &p.projector.b2},
        {"head.w1", &p.head.w1},           {"head.b1", &p.head.b1},
        {"head.w2", &p.head.w2},           {"head.b2", &p.head.b2},
        {"prototypes.mu", &p.prototypes.mu},
    };
}

} // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::string& config_hash) {
    json header;
    header["k"] = params.k;
    header["config_hash"] = config_hash;
    header["dims"] = {{"feature_dim", params.dims.feature_dim},
                      {"hidden_dim", params.dims.hidden_dim},
                      {"repr_dim", params.dims.repr_dim},
                      {"proj_hidden", params.dims.proj_hidden},
                      {"head_hidden", params.dims.head_hidden},
                      {"combine", params.dims.combine == CombineMode::Concat ? "concat" : "product"}};
    header["arrays"] = json::array();
    for (const auto& a : checkpoint_arrays(params)) {
        header["arrays"].push_back({{"name", a.name}, {"shape", a.tensor->shape()}});
    }
    const std::string head_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = head_str.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(head_str.data(), static_cast<std::streamsize>(head_str.size()));
    for (const auto& a : checkpoint_arrays(params)) {
        out.write(reinterpret_cast<const char*>(a.tensor->data().data()),
                  static_cast<std::streamsize>(a.tensor->size() * sizeof(double)));
    }
    if (!out) throw IoError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw IoError(path + ": not a checkpoint file");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string head_str(len, '\0');
    in.read(head_str.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError(path + ": truncated header");

    json header = json::parse(head_str, nullptr, false);
    if (header.is_discarded()) throw IoError(path + ": corrupt header");

    Checkpoint ck;
    ck.config_hash = header.value("config_hash", "");
    ck.params.k = header.at("k").get<std::size_t>();
    const auto& dims = header.at("dims");
    ck.params.dims.feature_dim = dims.at("feature_dim").get<std::size_t>();
    ck.params.dims.hidden_dim = dims.at("hidden_dim").get<std::size_t>();
    ck.params.dims.repr_dim = dims.at("repr_dim").get<std::size_t>();
    ck.params.dims.proj_hidden = dims.at("proj_hidden").get<std::size_t>();
    ck.params.dims.head_hidden = dims.at("head_hidden").get<std::size_t>();
    ck.params.dims.combine = dims.at("combine").get<std::string>() == "product"
                                 ? CombineMode::Product
                                 : CombineMode::Concat;

    std::map<std::string, Tensor> loaded;
    for (const auto& entry : header.at("arrays")) {
        const auto name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        std::size_t count = 1;
        for (auto d : shape) count *= d;
        std::vector<double> data(count);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw IoError(path + ": truncated array " + name);
        loaded.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
    auto take = [&](const char* name) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw IoError(path + ": missing array " + name);
        return it->second;
    };
    ck.params.online.w1 = take("online.w1");
    ck.params.online.w2 = take("online.w2");
    ck.params.target.w1 = take("target.w1");
    ck.params.target.w2 = take("target.w2");
    ck.params.projector.w1 = take("projector.w1");
    ck.params.projector.b1 = take("projector.b1");
    ck.params.projector.w2 = take("projector.w2");
    ck.params.projector.b2 = take("projector.b2");
    ck.params.head.w1 = take("head.w1");
    ck.params.head.b1 = take("head.b1");
    ck.params.head.w2 = take("head.w2");
    ck.params.head.b2 = take("head.b2");
    ck.params.prototypes.mu = take("prototypes.mu");
    return ck;
}

// ---- config ------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

} // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw UsageError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!out.emplace(key, value).second)
            throw UsageError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return out;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

const std::string* ConfigView::find(const std::string& key) {
    consumed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

double ConfigView::get_double(const std::string& key, double fallback) {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        std::size_t pos = 0;
        const double parsed = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("trailing");
        return parsed;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': cannot parse '" + *v + "' as a real");
    }
}

std::size_t ConfigView::get_size(const std::string& key, std::size_t fallback) {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        std::size_t pos = 0;
        const long long parsed = std::stoll(*v, &pos);
        if (pos != v->size() || parsed < 0) throw std::invalid_argument("bad");
        return static_cast<std::size_t>(parsed);
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': cannot parse '" + *v + "' as a count");
    }
}

std::uint64_t ConfigView::get_u64(const std::string& key, std::uint64_t fallback) {
    const std::string* v = find(key);
    if (!v) return fallback;
    try {
        std::size_t pos = 0;
        const unsigned long long parsed = std::stoull(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("bad");
        return parsed;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': cannot parse '" + *v + "' as an integer");
    }
}

bool ConfigView::get_bool(const std::string& key, bool fallback) {
    const std::string* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw UsageError("config key '" + key + "': cannot parse '" + *v + "' as a boolean");
}

std::string ConfigView::get_string(const std::string& key, const std::string& fallback) {
    const std::string* v = find(key);
    return v ? *v : fallback;
}

void ConfigView::reject_unknown() const {
    for (const auto& [key, value] : values_) {
        if (!consumed_.count(key))
            throw UsageError("unknown config key '" + key + "'");
    }
}

std::string render_config(const std::map<std::string, std::string>& values) {
    std::ostringstream os;
    for (const auto& [key, value] : values) os << key << " = " << value << "\n";
    return os.str();
}

// ---- manifest ----------------------------------------------------------------

void write_manifest(const std::string& path, const RunManifest& manifest) {
    json j;
    j["command"] = manifest.command;
    j["config"] = manifest.config;
    j["seed"] = manifest.seed;
    j["code_version"] = manifest.code_version;
    j["input_checksums"] = manifest.input_checksums;
    j["outputs"] = manifest.outputs;
    j["wall_ms"] = manifest.wall_ms;
    j["status"] = manifest.status;
    if (!manifest.error.empty()) j["error"] = manifest.error;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
}

// ---- logs and CSVs -----------------------------------------------------------

void write_training_log(const std::string& path, const std::vector<EpochRecord>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& rec : log) {
        json j;
        j["epoch"] = rec.epoch;
        j["loss_total"] = rec.loss_total;
        j["loss_local"] = rec.loss_local;
        j["loss_global"] = rec.loss_global;
        j["entropy"] = rec.entropy;
        j["mean_pairwise_cosine"] = rec.mean_pairwise_cosine;
        j["effective_clusters"] = rec.effective_clusters;
        j["wall_ms"] = rec.wall_ms;
        out << j.dump() << "\n";
    }
}

void write_representations_csv(const std::string& path, const Tensor& representations) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "node_id";
    for (std::size_t j = 0; j < representations.cols(); ++j) out << ",dim_" << j;
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < representations.rows(); ++i) {
        out << i;
        for (std::size_t j = 0; j < representations.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", representations.at(i, j));
            out << "," << buf;
        }
        out << "\n";
    }
}

Tensor read_representations_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": empty file");
    std::vector<double> data;
    std::size_t rows = 0, cols = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        bool first = true;
        while (std::getline(ss, cell, ',')) {
            if (first) { // node_id column
                first = false;
                continue;
            }
            try {
                data.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError(path + ":" + std::to_string(lineno) + ": bad value '" + cell + "'");
            }
            ++col;
        }
        if (cols == 0) cols = col;
        else if (col != cols)
            throw IoError(path + ":" + std::to_string(lineno) + ": ragged row");
        ++rows;
    }
    if (rows == 0 || cols == 0) throw IoError(path + ": no data rows");
    return Tensor({rows, cols}, std::move(data));
}

void write_posteriors_csv(const std::string& path, const Tensor& posteriors) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "node_id";
    for (std::size_t j = 0; j < posteriors.cols(); ++j) out << ",k_" << j;
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < posteriors.rows(); ++i) {
        out << i;
        for (std::size_t j = 0; j < posteriors.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", posteriors.at(i, j));
            out << "," << buf;
        }
        out << "\n";
    }
}

std::string eval_report_json(const EvalReport& report) {
    json j;
    j["accuracy"] = report.accuracy;
    j["nmi"] = report.nmi;
    j["train_size"] = report.train_size;
    j["val_size"] = report.val_size;
    j["test_size"] = report.test_size;
    j["probe_lambda"] = report.probe_lambda;
    j["seed"] = report.seed;
    j["representation_checksum"] = report.representation_checksum;
    return j.dump(2);
}

} // namespace dssl
