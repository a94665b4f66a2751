#pragma once

#include "dssl/eval.hpp"
#include "dssl/model.hpp"
#include "dssl/trainer.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dssl {

inline constexpr const char* kVersion = "dssl 0.1.0";

std::string fnv1a_hex(const void* data, std::size_t bytes);
std::string fnv1a_file(const std::string& path);

// ---- checkpoint container ---------------------------------------------------
// Binary layout: magic "DSSLCKP1", uint64 LE header length, JSON header,
// then the raw little-endian float64 arrays in header order. The header
// lists array names and shapes plus dims, k, and the config hash.

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::string& config_hash);

struct Checkpoint {
    ModelParams params;
    std::string config_hash;
};
Checkpoint load_checkpoint(const std::string& path);

// ---- flat key = value config ----------------------------------------------

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin = "<config>");
std::map<std::string, std::string> parse_config_file(const std::string& path);

/// Typed accessor that tracks consumed keys so unknown ones can be rejected
/// by name.
class ConfigView {
public:
    explicit ConfigView(std::map<std::string, std::string> values) : values_(std::move(values)) {}

    double get_double(const std::string& key, double fallback);
    std::size_t get_size(const std::string& key, std::size_t fallback);
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::string get_string(const std::string& key, const std::string& fallback);

    /// Throws UsageError naming the first unconsumed key, if any.
    void reject_unknown() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    const std::string* find(const std::string& key);
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

/// Canonical "key = value" rendering, used for hashing and manifests.
std::string render_config(const std::map<std::string, std::string>& values);

// ---- run manifest -----------------------------------------------------------

struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::uint64_t seed = 0;
    std::string code_version = kVersion;
    std::map<std::string, std::string> input_checksums;
    std::vector<std::string> outputs;
    double wall_ms = 0.0;
    std::string status = "ok";
    std::string error;
};

void write_manifest(const std::string& path, const RunManifest& manifest);

// ---- training log and CSV formats -------------------------------------------

void write_training_log(const std::string& path, const std::vector<EpochRecord>& log);

/// Header: node_id,dim_0..dim_{D'-1}
void write_representations_csv(const std::string& path, const Tensor& representations);
Tensor read_representations_csv(const std::string& path);

/// Header: node_id,k_0..k_{K-1}
void write_posteriors_csv(const std::string& path, const Tensor& posteriors);

std::string eval_report_json(const EvalReport& report);

} // namespace dssl
