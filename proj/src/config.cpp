#include "maskdiff/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace maskdiff {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_text(text);
}

KvConfig KvConfig::from_text(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     " is not 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::runtime_error("config: empty key on line " +
                                                  std::to_string(lineno));
        if (cfg.values_.count(key))
            throw std::runtime_error("config: duplicate key '" + key + "'");
        cfg.values_[key] = value;
    }
    return cfg;
}

bool KvConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) {
    seen_[key] = true;
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) {
    seen_[key] = true;
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' is not a number");
    }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) {
    seen_[key] = true;
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoll(it->second);
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' is not an integer");
    }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) {
    seen_[key] = true;
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config: key '" + key + "' is not a boolean");
}

std::vector<int> KvConfig::get_int_list(const std::string& key, std::vector<int> fallback) {
    seen_[key] = true;
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    std::istringstream ss(it->second);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) continue;
        out.push_back(std::stoi(part));
    }
    if (out.empty()) throw std::runtime_error("config: key '" + key + "' is an empty list");
    return out;
}

void KvConfig::reject_unknown_keys() const {
    std::string unknown;
    for (const auto& [key, value] : values_)
        if (!seen_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty())
        throw std::runtime_error("config: unknown keys: " + unknown);
}

std::string KvConfig::canonical() const {
    std::string out;
    for (const auto& [key, value] : values_) out += key + "=" + value + "\n";
    return out;
}

RunConfig RunConfig::from_kv(KvConfig& kv) {
    RunConfig rc;
    rc.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
    rc.vocab_cap = static_cast<int>(kv.get_int("vocab_cap", 128));

    rc.model.max_len = static_cast<int>(kv.get_int("model_max_len", 64));
    rc.model.dim = static_cast<int>(kv.get_int("model_dim", 64));
    rc.model.blocks = static_cast<int>(kv.get_int("model_blocks", 4));
    rc.model.heads = static_cast<int>(kv.get_int("model_heads", 4));
    rc.model.init_std = kv.get_double("model_init_std", 0.02);

    TeacherConfig& tc = rc.teacher;
    tc.lr = kv.get_double("teacher_lr", tc.lr);
    tc.beta1 = kv.get_double("teacher_beta1", tc.beta1);
    tc.beta2 = kv.get_double("teacher_beta2", tc.beta2);
    tc.weight_decay = kv.get_double("teacher_weight_decay", tc.weight_decay);
    tc.warmup_steps = static_cast<std::uint64_t>(
        kv.get_int("teacher_warmup_steps", static_cast<std::int64_t>(tc.warmup_steps)));
    tc.lr_decay = kv.get_string("teacher_lr_decay", tc.lr_decay);
    tc.batch_size = static_cast<int>(kv.get_int("teacher_batch_size", tc.batch_size));
    tc.total_steps = static_cast<std::uint64_t>(
        kv.get_int("teacher_total_steps", static_cast<std::int64_t>(tc.total_steps)));
    tc.schedule_kind = kv.get_string("teacher_schedule", tc.schedule_kind);
    tc.eval_interval = static_cast<std::uint64_t>(
        kv.get_int("teacher_eval_interval", static_cast<std::int64_t>(tc.eval_interval)));
    tc.eval_sequences = static_cast<int>(kv.get_int("teacher_eval_sequences", tc.eval_sequences));
    tc.time_samples = static_cast<int>(kv.get_int("teacher_time_samples", tc.time_samples));
    tc.time_floor = kv.get_double("teacher_time_floor", tc.time_floor);
    tc.grad_clip = kv.get_double("teacher_grad_clip", tc.grad_clip);
    tc.seed = rc.seed;

    DistillConfig& dc = rc.distill;
    dc.group_size = static_cast<int>(kv.get_int("distill_group_size", dc.group_size));
    dc.iterations = static_cast<std::uint64_t>(
        kv.get_int("distill_iterations", static_cast<std::int64_t>(dc.iterations)));
    dc.student_lr = kv.get_double("distill_student_lr", dc.student_lr);
    dc.disc_lr = kv.get_double("distill_disc_lr", dc.disc_lr);
    dc.adam_beta1 = kv.get_double("distill_beta1", dc.adam_beta1);
    dc.adam_beta2 = kv.get_double("distill_beta2", dc.adam_beta2);
    dc.student_weight_decay = kv.get_double("distill_student_weight_decay",
                                            dc.student_weight_decay);
    dc.disc_weight_decay = kv.get_double("distill_disc_weight_decay", dc.disc_weight_decay);
    dc.pi_family = kv.get_string("distill_pi_family", dc.pi_family);
    dc.pi_a = kv.get_double("distill_pi_a", dc.pi_a);
    dc.pi_b = kv.get_double("distill_pi_b", dc.pi_b);
    dc.omega_mode = kv.get_string("distill_omega_mode", dc.omega_mode);
    dc.coupled_time = kv.get_bool("distill_coupled_time", dc.coupled_time);
    dc.decompose_score = kv.get_bool("distill_decompose_score", dc.decompose_score);
    dc.kl_weight = kv.get_double("distill_kl_weight", dc.kl_weight);
    dc.entropy_weight = kv.get_double("distill_entropy_weight", dc.entropy_weight);
    dc.epsilon = kv.get_double("distill_epsilon", dc.epsilon);
    dc.rollout_nfe = static_cast<int>(kv.get_int("distill_rollout_nfe", dc.rollout_nfe));
    dc.teacher_rollout_nfe =
        static_cast<int>(kv.get_int("distill_teacher_rollout_nfe", dc.teacher_rollout_nfe));
    dc.teacher_pool = static_cast<int>(kv.get_int("distill_teacher_pool", dc.teacher_pool));
    dc.advantage_mode = kv.get_string("distill_advantage_mode", dc.advantage_mode);
    dc.disc_init = kv.get_string("distill_disc_init", dc.disc_init);
    dc.schedule_kind = kv.get_string("distill_schedule", dc.schedule_kind);
    dc.log_interval = static_cast<std::uint64_t>(
        kv.get_int("distill_log_interval", static_cast<std::int64_t>(dc.log_interval)));
    dc.seed = rc.seed;

    SamplerConfig& sc = rc.sampler;
    sc.nfe = static_cast<int>(kv.get_int("sampler_nfe", sc.nfe));
    sc.split_fraction = kv.get_double("sampler_split_fraction", sc.split_fraction);
    sc.h_max = kv.get_double("sampler_h_max", sc.h_max);
    sc.rerank_candidates = static_cast<int>(kv.get_int("sampler_rerank_candidates",
                                                       sc.rerank_candidates));
    sc.rerank_temperature = kv.get_double("sampler_rerank_temperature", sc.rerank_temperature);

    EvalConfig& ec = rc.eval;
    ec.nfe_list = kv.get_int_list("eval_nfe_list", ec.nfe_list);
    ec.num_samples = static_cast<int>(kv.get_int("eval_num_samples", ec.num_samples));
    ec.ppl_grid = static_cast<int>(kv.get_int("eval_ppl_grid", ec.ppl_grid));
    const std::string em = kv.get_string("eval_entropy_mode", "per_sample");
    if (em == "per_sample")
        ec.entropy_mode = EntropyMode::per_sample;
    else if (em == "per_position")
        ec.entropy_mode = EntropyMode::per_position;
    else
        throw std::runtime_error("config: eval_entropy_mode must be per_sample or per_position");
    ec.sampler = rc.sampler;
    ec.seed = rc.seed;

    kv.reject_unknown_keys();
    return rc;
}

std::uint64_t fnv1a_hash(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

const char* code_version() { return "maskdiff 0.1.0"; }

void write_manifest(const std::string& dir, const std::string& command,
                    const std::string& canonical_config, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {
        {"command", command},
        {"config_hash", fnv1a_hash(canonical_config)},
        {"code_version", code_version()},
        {"seed", seed},
    };
    std::ofstream out(std::filesystem::path(dir) / "manifest.json");
    if (!out) throw std::runtime_error("write_manifest: cannot write to " + dir);
    out << manifest.dump(2) << '\n';
}

}  // namespace maskdiff
