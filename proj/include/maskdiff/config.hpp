// Flat key = value configuration files, the aggregated run configuration,
// and the run manifest (config hash + code version + seed) that makes reruns
// comparable.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskdiff/distill.hpp"
#include "maskdiff/metrics.hpp"
#include "maskdiff/teacher.hpp"

namespace maskdiff {

// "key = value" per line; '#' starts a comment. Unknown keys are rejected at
// the end of parsing (catches typos), so every get() registers its key.
class KvConfig {
public:
    KvConfig() = default;
    static KvConfig from_file(const std::string& path);
    static KvConfig from_text(const std::string& text);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key, double fallback);
    std::int64_t get_int(const std::string& key, std::int64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback);

    // Throws listing any file key never requested by a get().
    void reject_unknown_keys() const;
    // Canonical "key=value" lines, sorted; the manifest hashes this.
    std::string canonical() const;

private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> seen_;
};

struct RunConfig {
    ModelConfig model;        // vocab_size filled at ingest time
    int vocab_cap = 128;
    TeacherConfig teacher;
    DistillConfig distill;
    SamplerConfig sampler;
    EvalConfig eval;
    std::uint64_t seed = 1;

    // Reads the "model_*", "teacher_*", "distill_*", "sampler_*", "eval_*"
    // key families plus "seed" and "vocab_cap".
    static RunConfig from_kv(KvConfig& kv);
};

std::uint64_t fnv1a_hash(const std::string& bytes);
const char* code_version();

// Writes manifest.json next to the outputs: config hash, code version, seed,
// command line. Same manifest => bitwise-identical metrics.
void write_manifest(const std::string& dir, const std::string& command,
                    const std::string& canonical_config, std::uint64_t seed);

}  // namespace maskdiff
