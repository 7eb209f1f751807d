#include "maskdiff/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace maskdiff {

namespace {

constexpr char kMagic[6] = {'M', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

struct Writer {
    std::string buf;
    void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void doubles(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }
};

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void raw(void* p, std::size_t n) {
        if (pos + n > buf.size()) throw CheckpointError("corrupt checkpoint: truncated");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::int32_t i32() {
        std::int32_t v;
        raw(&v, 4);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (pos + n > buf.size()) throw CheckpointError("corrupt checkpoint: truncated");
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
};

void write_config(Writer& w, const ModelConfig& cfg) {
    w.i32(cfg.vocab_size);
    w.i32(cfg.max_len);
    w.i32(cfg.dim);
    w.i32(cfg.blocks);
    w.i32(cfg.heads);
    w.f64(cfg.init_std);
}

ModelConfig read_config(Reader& r) {
    ModelConfig cfg;
    cfg.vocab_size = r.i32();
    cfg.max_len = r.i32();
    cfg.dim = r.i32();
    cfg.blocks = r.i32();
    cfg.heads = r.i32();
    cfg.init_std = r.f64();
    return cfg;
}

void write_container(const std::string& path, const std::string& kind, const ModelConfig& cfg,
                     const Vocabulary& vocab, const std::vector<double>& extra,
                     const std::vector<Parameter*>& params) {
    Writer payload;
    payload.str(kind);
    write_config(payload, cfg);
    payload.str(vocab.chars);
    payload.u64(extra.size());
    payload.doubles(extra.data(), extra.size());
    payload.u32(static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        payload.str(p->name);
        payload.i32(p->tensor.rows());
        payload.i32(p->tensor.cols());
        payload.doubles(p->tensor.data().data(), p->tensor.size());
    }

    Writer file;
    file.raw(kMagic, sizeof(kMagic));
    file.u32(kVersion);
    file.u64(payload.buf.size());
    file.buf += payload.buf;
    file.u64(fnv1a(payload.buf));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot open for write: " + tmp);
        out.write(file.buf.data(), static_cast<std::streamsize>(file.buf.size()));
        if (!out) throw CheckpointError("short write: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

struct Container {
    std::string kind;
    ModelConfig config;
    Vocabulary vocab;
    std::vector<double> extra;
    std::vector<std::tuple<std::string, int, int, std::vector<double>>> tensors;
};

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (file.size() < sizeof(kMagic) + 4 + 8 || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("not a checkpoint file: " + path);
    Reader hdr(file);
    hdr.pos = sizeof(kMagic);
    const std::uint32_t version = hdr.u32();
    if (version != kVersion)
        throw CheckpointError("checkpoint version mismatch: file has " + std::to_string(version) +
                              ", reader expects " + std::to_string(kVersion));
    const std::uint64_t payload_size = hdr.u64();
    if (hdr.pos + payload_size + 8 > file.size())
        throw CheckpointError("corrupt checkpoint: truncated");
    const std::string payload = file.substr(hdr.pos, payload_size);
    Reader ftr(file);
    ftr.pos = hdr.pos + payload_size;
    if (ftr.u64() != fnv1a(payload)) throw CheckpointError("corrupt checkpoint: checksum mismatch");

    Reader r(payload);
    Container c;
    c.kind = r.str();
    c.config = read_config(r);
    c.vocab.chars = r.str();
    const std::uint64_t extra_n = r.u64();
    c.extra.resize(extra_n);
    r.raw(c.extra.data(), extra_n * sizeof(double));
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        const int rows = r.i32();
        const int cols = r.i32();
        std::vector<double> data(static_cast<std::size_t>(rows) * cols);
        r.raw(data.data(), data.size() * sizeof(double));
        c.tensors.emplace_back(std::move(name), rows, cols, std::move(data));
    }
    return c;
}

void check_kind_and_config(const Container& c, const std::string& kind,
                           const ModelConfig* expect) {
    if (c.kind != kind)
        throw CheckpointError("checkpoint holds a '" + c.kind + "', expected '" + kind + "'");
    if (expect && !(c.config == *expect))
        throw CheckpointError("checkpoint config (" + c.config.describe() +
                              ") does not match expected (" + expect->describe() + ")");
}

template <class Model>
void restore_params(Model& model, const Container& c) {
    const auto params = model.store().all();
    for (const auto& [name, rows, cols, data] : c.tensors) {
        Parameter* p = model.store().find(name);
        if (!p) throw CheckpointError("checkpoint tensor '" + name + "' unknown to this model");
        if (p->tensor.rows() != rows || p->tensor.cols() != cols)
            throw CheckpointError("checkpoint tensor '" + name + "' shape mismatch");
        std::memcpy(p->tensor.data().data(), data.data(), sizeof(double) * data.size());
    }
    std::size_t restored = c.tensors.size();
    if (restored != params.size())
        throw CheckpointError("checkpoint tensor count mismatch: file has " +
                              std::to_string(restored) + ", model has " +
                              std::to_string(params.size()));
}

}  // namespace

void save_denoiser(const std::string& path, const DenoiserModel& model, const Vocabulary& vocab) {
    write_container(path, "denoiser", model.config(), vocab, {},
                    const_cast<DenoiserModel&>(model).parameters());
}

std::unique_ptr<DenoiserModel> load_denoiser(const std::string& path, Vocabulary* vocab_out,
                                             const ModelConfig* expect) {
    Container c = read_container(path);
    check_kind_and_config(c, "denoiser", expect);
    RngStream dummy(0, 0);
    auto model = std::make_unique<DenoiserModel>(c.config, dummy);
    restore_params(*model, c);
    if (vocab_out) *vocab_out = c.vocab;
    return model;
}

void save_discriminator(const std::string& path, const DiscriminatorModel& model,
                        const Vocabulary& vocab) {
    write_container(path, "discriminator", model.config(), vocab, model.sn_state(),
                    const_cast<DiscriminatorModel&>(model).parameters());
}

std::unique_ptr<DiscriminatorModel> load_discriminator(const std::string& path,
                                                       Vocabulary* vocab_out,
                                                       const ModelConfig* expect) {
    Container c = read_container(path);
    check_kind_and_config(c, "discriminator", expect);
    RngStream dummy(0, 0);
    auto model = std::make_unique<DiscriminatorModel>(c.config, dummy);
    restore_params(*model, c);
    if (c.extra.size() != model->sn_state().size())
        throw CheckpointError("checkpoint spectral state size mismatch");
    model->sn_state() = c.extra;
    if (vocab_out) *vocab_out = c.vocab;
    return model;
}

CheckpointInfo inspect_checkpoint(const std::string& path) {
    Container c = read_container(path);
    CheckpointInfo info;
    info.kind = c.kind;
    info.config = c.config;
    info.vocab_size = c.vocab.size();
    for (const auto& [name, rows, cols, data] : c.tensors) {
        info.total_params += data.size();
        info.tensor_summaries.push_back(name + " " + std::to_string(rows) + "x" +
                                        std::to_string(cols));
    }
    return info;
}

}  // namespace maskdiff
