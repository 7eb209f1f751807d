#include "maskdiff/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "maskdiff/kernels.hpp"

namespace maskdiff {

namespace {

thread_local bool g_grad_enabled = true;

// Activation buffers run into the hundreds of KB; keep glibc from serving
// them with mmap (which hands back zeroed pages every graph rebuild).
[[maybe_unused]] const bool g_malloc_tuned = [] {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 128 * 1024 * 1024);
#endif
    return true;
}();

const kernels::Kernels& K() { return kernels::active(); }

NodePtr make_node(int rows, int cols) {
    auto n = std::make_shared<TensorNode>();
    n->rows = rows;
    n->cols = cols;
    n->value.resize(static_cast<std::size_t>(rows) * cols);  // uninitialized
    return n;
}

bool track(std::initializer_list<const Tensor*> parents) {
    if (!g_grad_enabled) return false;
    for (const Tensor* p : parents)
        if (p->node()->requires_grad) return true;
    return false;
}

void check_defined(const Tensor& t, const char* who) {
    if (!t.defined()) throw std::invalid_argument(std::string(who) + ": undefined tensor");
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    auto n = make_node(rows, cols);
    K().fill(n->value.data(), n->size(), 0.0);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(int rows, int cols, double v, bool requires_grad) {
    auto n = make_node(rows, cols);
    K().fill(n->value.data(), n->size(), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(int rows, int cols, std::vector<double> data, bool requires_grad) {
    if (data.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("from_data: data length does not match shape");
    auto n = make_node(rows, cols);
    std::memcpy(n->value.data(), data.data(), sizeof(double) * data.size());
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from_data(1, 1, {v}, requires_grad);
}

double Tensor::value() const {
    if (size() != 1) throw std::logic_error("value(): tensor is not scalar");
    return node_->value[0];
}

std::span<double> Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->size(), 0.0);
    return node_->grad;
}

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty()) throw std::logic_error("grad(): never populated");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) K().fill(node_->grad.data(), node_->grad.size(), 0.0);
}

// ---- backward engine ----

void backward(const Tensor& loss) {
    check_defined(loss, "backward");
    if (loss.size() != 1) throw std::logic_error("backward: loss must be scalar");
    TensorNode* root = loss.node().get();

    // Iterative DFS post-order over grad-requiring subgraph.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    if (root->requires_grad) stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_map<TensorNode*, std::vector<double>> bufs;
    bufs.reserve(order.size());
    auto buf_of = [&](TensorNode* n) -> std::vector<double>& {
        auto it = bufs.find(n);
        if (it == bufs.end()) it = bufs.emplace(n, std::vector<double>(n->size(), 0.0)).first;
        return it->second;
    };
    if (root->requires_grad) buf_of(root)[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (!n->backprop) continue;
        const std::vector<double>& g = buf_of(n);
        std::vector<std::vector<double>*> pbufs(n->parents.size(), nullptr);
        for (std::size_t i = 0; i < n->parents.size(); ++i) {
            TensorNode* p = n->parents[i].get();
            if (p->requires_grad) pbufs[i] = &buf_of(p);
        }
        n->backprop(*n, g.data(), pbufs);
    }

    // Accumulate pass results into the persistent grads of leaves (parameters
    // and inputs); interior nodes only carry pass-local buffers.
    for (TensorNode* n : order) {
        if (!n->parents.empty()) continue;
        auto it = bufs.find(n);
        if (it == bufs.end()) continue;
        if (n->grad.empty()) n->grad.assign(n->size(), 0.0);
        K().add(n->grad.data(), n->grad.data(), it->second.data(), n->size());
    }
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + ")");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    auto out = make_node(m, n);
    K().matmul(a.data().data(), b.data().data(), out->value.data(), m, k, n, false);
    if (track({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backprop = [m, k, n](const TensorNode& o, const double* g,
                                  const std::vector<std::vector<double>*>& pb) {
            const TensorNode* A = o.parents[0].get();
            const TensorNode* B = o.parents[1].get();
            if (pb[0]) K().matmul_nt(g, B->value.data(), pb[0]->data(), m, n, k, true);
            if (pb[1]) K().matmul_tn(A->value.data(), g, pb[1]->data(), k, m, n, true);
        };
    }
    return Tensor(out);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, double scale) {
    check_defined(a, "matmul_nt");
    check_defined(b, "matmul_nt");
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimensions disagree");
    const int m = a.rows(), k = a.cols(), n = b.rows();
    auto out = make_node(m, n);
    K().matmul_nt(a.data().data(), b.data().data(), out->value.data(), m, k, n, false);
    if (scale != 1.0)
        K().scale(out->value.data(), out->value.data(), out->size(), scale);
    if (track({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backprop = [m, k, n, scale](const TensorNode& o, const double* g,
                                         const std::vector<std::vector<double>*>& pb) {
            const TensorNode* A = o.parents[0].get();
            const TensorNode* B = o.parents[1].get();
            const double* gexp = g;
            std::vector<double> scaled;
            if (scale != 1.0) {
                scaled.resize(o.size());
                K().scale(scaled.data(), g, o.size(), scale);
                gexp = scaled.data();
            }
            if (pb[0]) K().matmul(gexp, B->value.data(), pb[0]->data(), m, n, k, true);
            if (pb[1]) K().matmul_tn(gexp, A->value.data(), pb[1]->data(), n, m, k, true);
        };
    }
    return Tensor(out);
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto out = make_node(a.rows(), a.cols());
    K().add(out->value.data(), a.data().data(), b.data().data(), out->size());
    if (track({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            for (int p = 0; p < 2; ++p)
                if (pb[p]) K().add(pb[p]->data(), pb[p]->data(), g, o.size());
        };
    }
    return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto out = make_node(a.rows(), a.cols());
    K().sub(out->value.data(), a.data().data(), b.data().data(), out->size());
    if (track({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            if (pb[0]) K().add(pb[0]->data(), pb[0]->data(), g, o.size());
            if (pb[1]) K().axpy(pb[1]->data(), g, o.size(), -1.0);
        };
    }
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto out = make_node(a.rows(), a.cols());
    K().mul(out->value.data(), a.data().data(), b.data().data(), out->size());
    if (track({&a, &b})) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            const std::size_t n = o.size();
            const double* av = o.parents[0]->value.data();
            const double* bv = o.parents[1]->value.data();
            if (pb[0])
                for (std::size_t i = 0; i < n; ++i) (*pb[0])[i] += g[i] * bv[i];
            if (pb[1])
                for (std::size_t i = 0; i < n; ++i) (*pb[1])[i] += g[i] * av[i];
        };
    }
    return Tensor(out);
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (v.rows() != 1 || v.cols() != m.cols())
        throw std::invalid_argument("add_rowvec: v must be 1 x cols(m)");
    auto out = make_node(m.rows(), m.cols());
    const int c = m.cols();
    for (int r = 0; r < m.rows(); ++r)
        K().add(out->value.data() + static_cast<std::size_t>(r) * c,
                m.data().data() + static_cast<std::size_t>(r) * c, v.data().data(), c);
    if (track({&m, &v})) {
        out->requires_grad = true;
        out->parents = {m.node(), v.node()};
        out->backprop = [c](const TensorNode& o, const double* g,
                            const std::vector<std::vector<double>*>& pb) {
            if (pb[0]) K().add(pb[0]->data(), pb[0]->data(), g, o.size());
            if (pb[1])
                for (int r = 0; r < o.rows; ++r)
                    K().add(pb[1]->data(), pb[1]->data(), g + static_cast<std::size_t>(r) * c, c);
        };
    }
    return Tensor(out);
}

Tensor scale(const Tensor& a, double c) {
    auto out = make_node(a.rows(), a.cols());
    K().scale(out->value.data(), a.data().data(), out->size(), c);
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [c](const TensorNode& o, const double* g,
                            const std::vector<std::vector<double>*>& pb) {
            if (pb[0]) K().axpy(pb[0]->data(), g, o.size(), c);
        };
    }
    return Tensor(out);
}

Tensor add_const(const Tensor& a, double c) {
    auto out = make_node(a.rows(), a.cols());
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = a.data()[i] + c;
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            if (pb[0]) K().add(pb[0]->data(), pb[0]->data(), g, o.size());
        };
    }
    return Tensor(out);
}

Tensor transpose(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    auto out = make_node(c, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out->value[static_cast<std::size_t>(j) * r + i] = a.at(i, j);
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [r, c](const TensorNode&, const double* g,
                               const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            for (int j = 0; j < c; ++j)
                for (int i = 0; i < r; ++i)
                    (*pb[0])[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
        };
    }
    return Tensor(out);
}

Tensor reshape(const Tensor& a, int rows, int cols) {
    if (static_cast<std::size_t>(rows) * cols != a.size())
        throw std::invalid_argument("reshape: element count mismatch");
    auto out = make_node(rows, cols);
    std::memcpy(out->value.data(), a.data().data(), sizeof(double) * a.size());
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            if (pb[0]) K().add(pb[0]->data(), pb[0]->data(), g, o.size());
        };
    }
    return Tensor(out);
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int r = parts[0].rows();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.cols();
    }
    auto out = make_node(r, total);
    int off = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        for (int i = 0; i < r; ++i)
            std::memcpy(out->value.data() + static_cast<std::size_t>(i) * total + off,
                        p.data().data() + static_cast<std::size_t>(i) * p.cols(),
                        sizeof(double) * p.cols());
        off += p.cols();
        any_grad = any_grad || p.requires_grad();
    }
    if (g_grad_enabled && any_grad) {
        out->requires_grad = true;
        for (const Tensor& p : parts) out->parents.push_back(p.node());
        out->backprop = [r, total](const TensorNode& o, const double* g,
                                   const std::vector<std::vector<double>*>& pb) {
            int off2 = 0;
            for (std::size_t pi = 0; pi < o.parents.size(); ++pi) {
                const int pc = o.parents[pi]->cols;
                if (pb[pi]) {
                    for (int i = 0; i < r; ++i)
                        K().add(pb[pi]->data() + static_cast<std::size_t>(i) * pc,
                                pb[pi]->data() + static_cast<std::size_t>(i) * pc,
                                g + static_cast<std::size_t>(i) * total + off2, pc);
                }
                off2 += pc;
            }
        };
    }
    return Tensor(out);
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const int c = parts[0].cols();
    int total = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        if (p.cols() != c) throw std::invalid_argument("concat_rows: column mismatch");
        total += p.rows();
        any_grad = any_grad || p.requires_grad();
    }
    auto out = make_node(total, c);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::memcpy(out->value.data() + off, p.data().data(), sizeof(double) * p.size());
        off += p.size();
    }
    if (g_grad_enabled && any_grad) {
        out->requires_grad = true;
        for (const Tensor& p : parts) out->parents.push_back(p.node());
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            std::size_t off2 = 0;
            for (std::size_t pi = 0; pi < o.parents.size(); ++pi) {
                const std::size_t sz = o.parents[pi]->size();
                if (pb[pi]) K().add(pb[pi]->data(), pb[pi]->data(), g + off2, sz);
                off2 += sz;
            }
        };
    }
    return Tensor(out);
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    const int r = a.rows(), w = c1 - c0, ac = a.cols();
    auto out = make_node(r, w);
    for (int i = 0; i < r; ++i)
        std::memcpy(out->value.data() + static_cast<std::size_t>(i) * w,
                    a.data().data() + static_cast<std::size_t>(i) * ac + c0, sizeof(double) * w);
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [r, w, ac, c0](const TensorNode&, const double* g,
                                       const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            for (int i = 0; i < r; ++i)
                K().add(pb[0]->data() + static_cast<std::size_t>(i) * ac + c0,
                        pb[0]->data() + static_cast<std::size_t>(i) * ac + c0,
                        g + static_cast<std::size_t>(i) * w, w);
        };
    }
    return Tensor(out);
}

Tensor softmax_rows(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    auto out = make_node(r, c);
    for (int i = 0; i < r; ++i) {
        const double* x = a.data().data() + static_cast<std::size_t>(i) * c;
        double* y = out->value.data() + static_cast<std::size_t>(i) * c;
        K().shift(y, x, c, -K().max(x, c));
        K().vexp(y, y, c);
        K().scale(y, y, c, 1.0 / K().sum(y, c));
    }
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [r, c](const TensorNode& o, const double* g,
                               const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            for (int i = 0; i < r; ++i) {
                const double* y = o.value.data() + static_cast<std::size_t>(i) * c;
                const double* gi = g + static_cast<std::size_t>(i) * c;
                double* d = pb[0]->data() + static_cast<std::size_t>(i) * c;
                const double dotgy = K().dot(gi, y, c);
                for (int j = 0; j < c; ++j) d[j] += y[j] * (gi[j] - dotgy);
            }
        };
    }
    return Tensor(out);
}

Tensor log_softmax_rows(const Tensor& a) {
    const int r = a.rows(), c = a.cols();
    auto out = make_node(r, c);
    std::vector<double> scratch(c);
    for (int i = 0; i < r; ++i) {
        const double* x = a.data().data() + static_cast<std::size_t>(i) * c;
        double* y = out->value.data() + static_cast<std::size_t>(i) * c;
        const double m = K().max(x, c);
        K().shift(scratch.data(), x, c, -m);
        K().vexp(scratch.data(), scratch.data(), c);
        const double lse = m + std::log(K().sum(scratch.data(), c));
        K().shift(y, x, c, -lse);
    }
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [r, c](const TensorNode& o, const double* g,
                               const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            for (int i = 0; i < r; ++i) {
                const double* y = o.value.data() + static_cast<std::size_t>(i) * c;
                const double* gi = g + static_cast<std::size_t>(i) * c;
                double* d = pb[0]->data() + static_cast<std::size_t>(i) * c;
                const double gs = K().sum(gi, c);
                for (int j = 0; j < c; ++j) d[j] += gi[j] - std::exp(y[j]) * gs;
            }
        };
    }
    return Tensor(out);
}

namespace {

template <class Fwd, class Bwd>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Bwd bwd) {
    auto out = make_node(a.rows(), a.cols());
    const double* x = a.data().data();
    for (std::size_t i = 0; i < out->size(); ++i) out->value[i] = fwd(x[i]);
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [bwd](const TensorNode& o, const double* g,
                              const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            const double* xv = o.parents[0]->value.data();
            const double* yv = o.value.data();
            for (std::size_t i = 0; i < o.size(); ++i) (*pb[0])[i] += g[i] * bwd(xv[i], yv[i]);
        };
    }
    return Tensor(out);
}

inline double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
    auto out = make_node(a.rows(), a.cols());
    K().vsigmoid(out->value.data(), a.data().data(), out->size());
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            const double* y = o.value.data();
            for (std::size_t i = 0; i < o.size(); ++i)
                (*pb[0])[i] += g[i] * y[i] * (1.0 - y[i]);
        };
    }
    return Tensor(out);
}

Tensor silu(const Tensor& a) {
    auto out = make_node(a.rows(), a.cols());
    K().vsilu(out->value.data(), a.data().data(), out->size());
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            const std::size_t n = o.size();
            const double* xv = o.parents[0]->value.data();
            std::vector<double> s(n);
            K().vsigmoid(s.data(), xv, n);
            for (std::size_t i = 0; i < n; ++i)
                (*pb[0])[i] += g[i] * s[i] * (1.0 + xv[i] * (1.0 - s[i]));
        };
    }
    return Tensor(out);
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary_elementwise(
        a,
        [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_elementwise(
        a,
        [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int r = x.rows(), c = x.cols();
    if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c)
        throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols");
    auto out = make_node(r, c);
    // Stash per-row mean and inverse stddev for the backward pass.
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r) * 2);
    for (int i = 0; i < r; ++i) {
        const double* xi = x.data().data() + static_cast<std::size_t>(i) * c;
        double* yi = out->value.data() + static_cast<std::size_t>(i) * c;
        const double mu = K().sum(xi, c) / c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * i] = mu;
        (*stats)[2 * i + 1] = inv;
        for (int j = 0; j < c; ++j)
            yi[j] = (xi[j] - mu) * inv * gain.data()[j] + bias.data()[j];
    }
    if (track({&x, &gain, &bias})) {
        out->requires_grad = true;
        out->parents = {x.node(), gain.node(), bias.node()};
        out->backprop = [r, c, stats](const TensorNode& o, const double* g,
                                      const std::vector<std::vector<double>*>& pb) {
            const double* xv = o.parents[0]->value.data();
            const double* gv = o.parents[1]->value.data();
            for (int i = 0; i < r; ++i) {
                const double mu = (*stats)[2 * i];
                const double inv = (*stats)[2 * i + 1];
                const double* xi = xv + static_cast<std::size_t>(i) * c;
                const double* gi = g + static_cast<std::size_t>(i) * c;
                // dxhat, plus reductions shared by the dx formula
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double xhat = (xi[j] - mu) * inv;
                    const double dxh = gi[j] * gv[j];
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xhat;
                }
                for (int j = 0; j < c; ++j) {
                    const double xhat = (xi[j] - mu) * inv;
                    if (pb[0])
                        (*pb[0])[static_cast<std::size_t>(i) * c + j] +=
                            inv * (gi[j] * gv[j] - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
                    if (pb[1]) (*pb[1])[j] += gi[j] * xhat;
                    if (pb[2]) (*pb[2])[j] += gi[j];
                }
            }
        };
    }
    return Tensor(out);
}

Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
    const int c = table.cols();
    auto out = make_node(static_cast<int>(ids.size()), c);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows())
            throw std::out_of_range("embedding_rows: id out of range");
        std::memcpy(out->value.data() + i * c,
                    table.data().data() + static_cast<std::size_t>(ids[i]) * c,
                    sizeof(double) * c);
    }
    if (track({&table})) {
        auto idv = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
        out->requires_grad = true;
        out->parents = {table.node()};
        out->backprop = [idv, c](const TensorNode&, const double* g,
                                 const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            for (std::size_t i = 0; i < idv->size(); ++i)
                K().add(pb[0]->data() + static_cast<std::size_t>((*idv)[i]) * c,
                        pb[0]->data() + static_cast<std::size_t>((*idv)[i]) * c,
                        g + i * c, c);
        };
    }
    return Tensor(out);
}

Tensor sum(const Tensor& a) {
    auto out = make_node(1, 1);
    out->value[0] = K().sum(a.data().data(), a.size());
    if (track({&a})) {
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [](const TensorNode& o, const double* g,
                           const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            for (std::size_t i = 0; i < o.parents[0]->size(); ++i) (*pb[0])[i] += g[0];
        };
    }
    return Tensor(out);
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor gather(const Tensor& a, std::span<const int> rows, std::span<const int> cols) {
    if (rows.size() != cols.size()) throw std::invalid_argument("gather: index size mismatch");
    auto out = make_node(1, static_cast<int>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= a.rows() || cols[i] < 0 || cols[i] >= a.cols())
            throw std::out_of_range("gather: index out of range");
        out->value[i] = a.at(rows[i], cols[i]);
    }
    if (track({&a})) {
        auto rv = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
        auto cv = std::make_shared<std::vector<int>>(cols.begin(), cols.end());
        const int ac = a.cols();
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [rv, cv, ac](const TensorNode&, const double* g,
                                     const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            for (std::size_t i = 0; i < rv->size(); ++i)
                (*pb[0])[static_cast<std::size_t>((*rv)[i]) * ac + (*cv)[i]] += g[i];
        };
    }
    return Tensor(out);
}

Tensor weighted_sum(const Tensor& a, std::span<const double> w) {
    if (w.size() != a.size()) throw std::invalid_argument("weighted_sum: weight size mismatch");
    auto out = make_node(1, 1);
    out->value[0] = K().dot(a.data().data(), w.data(), w.size());
    if (track({&a})) {
        auto wv = std::make_shared<std::vector<double>>(w.begin(), w.end());
        out->requires_grad = true;
        out->parents = {a.node()};
        out->backprop = [wv](const TensorNode&, const double* g,
                             const std::vector<std::vector<double>*>& pb) {
            if (pb[0]) K().axpy(pb[0]->data(), wv->data(), wv->size(), g[0]);
        };
    }
    return Tensor(out);
}

Tensor soft_cross_entropy_rows(const Tensor& logp, const std::vector<double>& q,
                               const std::vector<double>& row_w) {
    const int r = logp.rows(), c = logp.cols();
    if (q.size() != logp.size() || row_w.size() != static_cast<std::size_t>(r))
        throw std::invalid_argument("soft_cross_entropy_rows: size mismatch");
    auto out = make_node(1, 1);
    double acc = 0.0;
    for (int i = 0; i < r; ++i)
        acc -= row_w[i] * K().dot(q.data() + static_cast<std::size_t>(i) * c,
                                  logp.data().data() + static_cast<std::size_t>(i) * c, c);
    out->value[0] = acc;
    if (track({&logp})) {
        auto qv = std::make_shared<std::vector<double>>(q);
        auto wv = std::make_shared<std::vector<double>>(row_w);
        out->requires_grad = true;
        out->parents = {logp.node()};
        out->backprop = [qv, wv, r, c](const TensorNode&, const double* g,
                                       const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            for (int i = 0; i < r; ++i)
                K().axpy(pb[0]->data() + static_cast<std::size_t>(i) * c,
                         qv->data() + static_cast<std::size_t>(i) * c, c, -g[0] * (*wv)[i]);
        };
    }
    return Tensor(out);
}

Tensor entropy_rows(const Tensor& logp, const std::vector<double>& row_w) {
    const int r = logp.rows(), c = logp.cols();
    if (row_w.size() != static_cast<std::size_t>(r))
        throw std::invalid_argument("entropy_rows: size mismatch");
    auto out = make_node(1, 1);
    double acc = 0.0;
    for (int i = 0; i < r; ++i) {
        const double* lp = logp.data().data() + static_cast<std::size_t>(i) * c;
        double h = 0.0;
        for (int j = 0; j < c; ++j) h -= std::exp(lp[j]) * lp[j];
        acc += row_w[i] * h;
    }
    out->value[0] = acc;
    if (track({&logp})) {
        auto wv = std::make_shared<std::vector<double>>(row_w);
        out->requires_grad = true;
        out->parents = {logp.node()};
        out->backprop = [wv, r, c](const TensorNode& o, const double* g,
                                   const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            const double* lpv = o.parents[0]->value.data();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) {
                    const double lp = lpv[static_cast<std::size_t>(i) * c + j];
                    (*pb[0])[static_cast<std::size_t>(i) * c + j] +=
                        -g[0] * (*wv)[i] * std::exp(lp) * (1.0 + lp);
                }
        };
    }
    return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, int target) {
    if (logits.rows() != 1) throw std::invalid_argument("cross_entropy: logits must be 1 x K");
    if (target < 0 || target >= logits.cols())
        throw std::out_of_range("cross_entropy: target out of range");
    Tensor lp = log_softmax_rows(logits);
    const int row = 0;
    return scale(gather(lp, std::span<const int>(&row, 1), std::span<const int>(&target, 1)), -1.0);
}

Tensor binary_cross_entropy(const Tensor& p, const std::vector<double>& y) {
    if (y.size() != p.size()) throw std::invalid_argument("binary_cross_entropy: size mismatch");
    auto out = make_node(1, 1);
    const std::size_t n = p.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        acc -= y[i] * std::log(p.data()[i]) + (1.0 - y[i]) * std::log1p(-p.data()[i]);
    out->value[0] = acc / static_cast<double>(n);
    if (track({&p})) {
        auto yv = std::make_shared<std::vector<double>>(y);
        out->requires_grad = true;
        out->parents = {p.node()};
        out->backprop = [yv](const TensorNode& o, const double* g,
                             const std::vector<std::vector<double>*>& pb) {
            if (!pb[0]) return;
            const std::size_t n2 = o.parents[0]->size();
            const double* pv = o.parents[0]->value.data();
            for (std::size_t i = 0; i < n2; ++i)
                (*pb[0])[i] += g[0] * (-(*yv)[i] / pv[i] + (1.0 - (*yv)[i]) / (1.0 - pv[i])) /
                               static_cast<double>(n2);
        };
    }
    return Tensor(out);
}

}  // namespace maskdiff
