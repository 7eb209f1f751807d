#include "maskdiff/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "maskdiff/kernels.hpp"

namespace maskdiff {

PerPositionProbs Denoiser::denoise(std::span<const int> tokens, double t) const {
    NoGradGuard guard;
    const int kk = vocab_size();
    const int mask = kk - 1;
    const int len = static_cast<int>(tokens.size());
    Tensor lp = log_probs(tokens, t);
    PerPositionProbs out(len, kk);
    for (int l = 0; l < len; ++l) {
        auto row = out.row(l);
        if (tokens[l] != mask) {
            row[tokens[l]] = 1.0;  // carry-over: unmasked inputs stay put
            continue;
        }
        for (int k = 0; k < kk - 1; ++k) row[k] = std::exp(lp.at(l, k));
        row[mask] = 0.0;
        // renormalize the exp roundoff so rows are simplex points
        double z = 0.0;
        for (int k = 0; k < kk - 1; ++k) z += row[k];
        for (int k = 0; k < kk - 1; ++k) row[k] /= z;
    }
    return out;
}

void ModelConfig::validate() const {
    if (vocab_size < 3) throw std::invalid_argument("ModelConfig: vocab_size must be >= 3");
    if (max_len < 1 || dim < 2 || blocks < 1 || heads < 1)
        throw std::invalid_argument("ModelConfig: nonpositive sizes");
    if (dim % heads != 0) throw std::invalid_argument("ModelConfig: heads must divide dim");
}

std::string ModelConfig::describe() const {
    return "vocab=" + std::to_string(vocab_size) + " max_len=" + std::to_string(max_len) +
           " dim=" + std::to_string(dim) + " blocks=" + std::to_string(blocks) +
           " heads=" + std::to_string(heads);
}

std::vector<double> time_features(double t, int dim) {
    std::vector<double> f(dim);
    const int half = dim / 2;
    for (int j = 0; j < half; ++j) {
        const double freq =
            std::exp(static_cast<double>(j) / std::max(1, half - 1) * std::log(1000.0));
        f[j] = std::sin(t * freq);
        f[half + j] = std::cos(t * freq);
    }
    if (dim % 2 == 1) f[dim - 1] = t;
    return f;
}

namespace detail {

Parameter* ParamStore::create(const std::string& name, int rows, int cols, RngStream& rng,
                              double std) {
    if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
    std::vector<double> data(static_cast<std::size_t>(rows) * cols);
    for (auto& x : data) x = rng.normal() * std;
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->tensor = Tensor::from_data(rows, cols, std::move(data), true);
    params_.push_back(std::move(p));
    return params_.back().get();
}

Parameter* ParamStore::create_zeros(const std::string& name, int rows, int cols) {
    if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->tensor = Tensor::zeros(rows, cols, true);
    params_.push_back(std::move(p));
    return params_.back().get();
}

Parameter* ParamStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

std::vector<Parameter*> ParamStore::all() const {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

void ParamStore::copy_from(const ParamStore& other) {
    for (auto& p : params_) {
        const Parameter* src = other.find(p->name);
        if (!src) continue;
        if (src->tensor.size() != p->tensor.size())
            throw std::logic_error("copy_from: shape mismatch for " + p->name);
        std::memcpy(p->tensor.data().data(), src->tensor.data().data(),
                    sizeof(double) * p->tensor.size());
    }
}

Backbone::Backbone(const ModelConfig& cfg, RngStream& rng, ParamStore& store) : cfg_(cfg) {
    const int d = cfg.dim;
    const double s = cfg.init_std;
    tok_emb_ = store.create("tok_emb", cfg.vocab_size, d, rng, s);
    pos_emb_ = store.create("pos_emb", cfg.max_len, d, rng, s);
    time_w1_ = store.create("time_w1", d, d, rng, s);
    time_b1_ = store.create_zeros("time_b1", 1, d);
    time_w2_ = store.create("time_w2", d, d, rng, s);
    time_b2_ = store.create_zeros("time_b2", 1, d);
    blocks_.resize(cfg.blocks);
    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string pre = "block" + std::to_string(b) + ".";
        Block& blk = blocks_[b];
        blk.ln1_g = store.create_zeros(pre + "ln1_g", 1, d);
        kernels::active().fill(blk.ln1_g->tensor.data().data(), d, 1.0);
        blk.ln1_b = store.create_zeros(pre + "ln1_b", 1, d);
        blk.wq = store.create(pre + "wq", d, d, rng, s);
        blk.bq = store.create_zeros(pre + "bq", 1, d);
        blk.wk = store.create(pre + "wk", d, d, rng, s);
        blk.bk = store.create_zeros(pre + "bk", 1, d);
        blk.wv = store.create(pre + "wv", d, d, rng, s);
        blk.bv = store.create_zeros(pre + "bv", 1, d);
        blk.wo = store.create(pre + "wo", d, d, rng, s);
        blk.bo = store.create_zeros(pre + "bo", 1, d);
        blk.ln2_g = store.create_zeros(pre + "ln2_g", 1, d);
        kernels::active().fill(blk.ln2_g->tensor.data().data(), d, 1.0);
        blk.ln2_b = store.create_zeros(pre + "ln2_b", 1, d);
        blk.mlp_w1 = store.create(pre + "mlp_w1", d, 4 * d, rng, s);
        blk.mlp_b1 = store.create_zeros(pre + "mlp_b1", 1, 4 * d);
        blk.mlp_w2 = store.create(pre + "mlp_w2", 4 * d, d, rng, s);
        blk.mlp_b2 = store.create_zeros(pre + "mlp_b2", 1, d);
    }
    lnf_g_ = store.create_zeros("lnf_g", 1, d);
    kernels::active().fill(lnf_g_->tensor.data().data(), d, 1.0);
    lnf_b_ = store.create_zeros("lnf_b", 1, d);
}

Tensor Backbone::trunk(Tensor x, double t) const {
    const int len = x.rows();
    const int d = cfg_.dim;
    const int dh = d / cfg_.heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<int> pos_ids(len);
    for (int l = 0; l < len; ++l) pos_ids[l] = l;
    x = add(x, embedding_rows(pos_emb_->tensor, pos_ids));

    Tensor tf = Tensor::from_data(1, d, time_features(t, d));
    Tensor temb = add_rowvec(
        matmul(silu(add_rowvec(matmul(tf, time_w1_->tensor), time_b1_->tensor)), time_w2_->tensor),
        time_b2_->tensor);
    x = add_rowvec(x, temb);

    for (const Block& blk : blocks_) {
        Tensor h = layer_norm_rows(x, blk.ln1_g->tensor, blk.ln1_b->tensor);
        Tensor q = add_rowvec(matmul(h, blk.wq->tensor), blk.bq->tensor);
        Tensor k = add_rowvec(matmul(h, blk.wk->tensor), blk.bk->tensor);
        Tensor v = add_rowvec(matmul(h, blk.wv->tensor), blk.bv->tensor);
        std::vector<Tensor> heads;
        heads.reserve(cfg_.heads);
        for (int hd = 0; hd < cfg_.heads; ++hd) {
            Tensor qh = slice_cols(q, hd * dh, (hd + 1) * dh);
            Tensor kh = slice_cols(k, hd * dh, (hd + 1) * dh);
            Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);
            Tensor att = softmax_rows(matmul_nt(qh, kh, inv_sqrt_dh));
            heads.push_back(matmul(att, vh));
        }
        Tensor cat = concat_cols(heads);
        x = add(x, add_rowvec(matmul(cat, blk.wo->tensor), blk.bo->tensor));

        Tensor h2 = layer_norm_rows(x, blk.ln2_g->tensor, blk.ln2_b->tensor);
        Tensor m = silu(add_rowvec(matmul(h2, blk.mlp_w1->tensor), blk.mlp_b1->tensor));
        x = add(x, add_rowvec(matmul(m, blk.mlp_w2->tensor), blk.mlp_b2->tensor));
    }
    return layer_norm_rows(x, lnf_g_->tensor, lnf_b_->tensor);
}

Tensor Backbone::forward(std::span<const int> tokens, double t) const {
    const int len = static_cast<int>(tokens.size());
    if (len < 1 || len > cfg_.max_len)
        throw std::invalid_argument("Backbone: sequence length exceeds max_len");
    for (int tok : tokens)
        if (tok < 0 || tok >= cfg_.vocab_size)
            throw std::out_of_range("Backbone: token index out of range");
    return trunk(embedding_rows(tok_emb_->tensor, tokens), t);
}

Tensor Backbone::forward_relaxed(const Tensor& onehot, double t) const {
    if (onehot.cols() != cfg_.vocab_size)
        throw std::invalid_argument("Backbone: relaxed input must be L x K");
    return trunk(matmul(onehot, tok_emb_->tensor), t);
}

}  // namespace detail

DenoiserModel::DenoiserModel(const ModelConfig& cfg, RngStream init_rng) : cfg_(cfg) {
    cfg_.validate();
    backbone_ = std::make_unique<detail::Backbone>(cfg_, init_rng, store_);
    out_w_ = store_.create("out_w", cfg_.dim, cfg_.vocab_size - 1, init_rng, cfg_.init_std);
    out_b_ = store_.create_zeros("out_b", 1, cfg_.vocab_size - 1);
}

Tensor DenoiserModel::forward_logits(std::span<const int> tokens, double t) const {
    Tensor h = backbone_->forward(tokens, t);
    return add_rowvec(matmul(h, out_w_->tensor), out_b_->tensor);
}

Tensor DenoiserModel::log_probs(std::span<const int> tokens, double t) const {
    return log_softmax_rows(forward_logits(tokens, t));
}

std::unique_ptr<DenoiserModel> DenoiserModel::clone() const {
    RngStream dummy(0, 0);
    auto copy = std::make_unique<DenoiserModel>(cfg_, dummy);
    copy->store_.copy_from(store_);
    return copy;
}

std::unique_ptr<DenoiserModel> init_student_from_teacher(const DenoiserModel& teacher) {
    return teacher.clone();
}

DiscriminatorModel::DiscriminatorModel(const ModelConfig& cfg, RngStream init_rng,
                                       const DenoiserModel* backbone_source)
    : cfg_(cfg) {
    cfg_.validate();
    backbone_ = std::make_unique<detail::Backbone>(cfg_, init_rng, store_);
    const int d = cfg_.dim;
    h1_w_ = store_.create("head.w1", d, d, init_rng, cfg_.init_std);
    h1_b_ = store_.create_zeros("head.b1", 1, d);
    h2_w_ = store_.create("head.w2", d, 1, init_rng, cfg_.init_std);
    h2_b_ = store_.create_zeros("head.b2", 1, 1);
    if (backbone_source) store_.copy_from(backbone_source->store());
    // u1[d], v1[d], sigma1, u2[d], v2[1], sigma2
    sn_state_.assign(static_cast<std::size_t>(2 * d) + 1 + d + 1 + 1, 0.0);
    RngStream sn_rng = init_rng.split("spectral_norm");
    for (int i = 0; i < 2 * d + 1 + d + 1 + 1; ++i) sn_state_[i] = sn_rng.normal();
    renormalize_head(500);
}

namespace {

// One power iteration for the leading singular value of W (in x out).
double power_iterate(std::span<const double> w, int in, int out, double* u, double* v,
                     int iters) {
    std::vector<double> tmp;
    for (int it = 0; it < iters; ++it) {
        // v = normalize(W^T u)
        for (int j = 0; j < out; ++j) {
            double acc = 0.0;
            for (int i = 0; i < in; ++i) acc += w[static_cast<std::size_t>(i) * out + j] * u[i];
            v[j] = acc;
        }
        double nv = 0.0;
        for (int j = 0; j < out; ++j) nv += v[j] * v[j];
        nv = std::sqrt(nv) + 1e-12;
        for (int j = 0; j < out; ++j) v[j] /= nv;
        // u = normalize(W v)
        for (int i = 0; i < in; ++i)
            u[i] = kernels::active().dot(w.data() + static_cast<std::size_t>(i) * out, v, out);
        double nu = 0.0;
        for (int i = 0; i < in; ++i) nu += u[i] * u[i];
        nu = std::sqrt(nu) + 1e-12;
        for (int i = 0; i < in; ++i) u[i] /= nu;
    }
    // sigma = u^T W v
    double sigma = 0.0;
    for (int i = 0; i < in; ++i)
        sigma += u[i] * kernels::active().dot(w.data() + static_cast<std::size_t>(i) * out, v, out);
    return sigma;
}

}  // namespace

void DiscriminatorModel::renormalize_head(int iters) {
    const int d = cfg_.dim;
    double* u1 = sn_state_.data();
    double* v1 = u1 + d;
    double* s1 = v1 + d;
    double* u2 = s1 + 1;
    double* v2 = u2 + d;
    double* s2 = v2 + 1;
    *s1 = power_iterate(h1_w_->tensor.data(), d, d, u1, v1, iters);
    *s2 = power_iterate(h2_w_->tensor.data(), d, 1, u2, v2, iters);
}

Tensor DiscriminatorModel::head(Tensor hidden) const {
    const int d = cfg_.dim;
    const double s1 = sn_state_[static_cast<std::size_t>(2 * d)];
    const double s2 = sn_state_.back();
    // effective weights W / sigma_hat; sigma_hat held constant in the graph
    Tensor w1 = scale(h1_w_->tensor, 1.0 / std::max(s1, 1e-12));
    Tensor w2 = scale(h2_w_->tensor, 1.0 / std::max(s2, 1e-12));
    Tensor h = silu(add_rowvec(matmul(hidden, w1), h1_b_->tensor));
    return add_rowvec(matmul(h, w2), h2_b_->tensor);
}

Tensor DiscriminatorModel::forward_logits(std::span<const int> tokens, double t) const {
    return head(backbone_->forward(tokens, t));
}

Tensor DiscriminatorModel::forward_logits_relaxed(const Tensor& onehot, double t) const {
    return head(backbone_->forward_relaxed(onehot, t));
}

std::vector<double> DiscriminatorModel::discriminate(std::span<const int> tokens,
                                                     double t) const {
    NoGradGuard guard;
    Tensor logits = forward_logits(tokens, t);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double p = 1.0 / (1.0 + std::exp(-logits.data()[i]));
        if (p < kProbClamp) p = kProbClamp;
        if (p > 1.0 - kProbClamp) p = 1.0 - kProbClamp;
        out[i] = p;
    }
    return out;
}

std::pair<double, double> DiscriminatorModel::head_operator_norms(int iters) const {
    const int d = cfg_.dim;
    std::vector<double> u1(d), v1(d), u2(d), v2(1);
    RngStream rng(99, 17);
    for (auto* vec : {&u1, &v1, &u2, &v2})
        for (auto& x : *vec) x = rng.normal();
    const double s1_true = power_iterate(h1_w_->tensor.data(), d, d, u1.data(), v1.data(), iters);
    const double s2_true = power_iterate(h2_w_->tensor.data(), d, 1, u2.data(), v2.data(), iters);
    const double s1_hat = sn_state_[static_cast<std::size_t>(2 * d)];
    const double s2_hat = sn_state_.back();
    return {s1_true / std::max(s1_hat, 1e-12), s2_true / std::max(s2_hat, 1e-12)};
}

}  // namespace maskdiff
