// Dense float64 tensors with reverse-mode autodiff.
//
// Graphs are dynamic: every op allocates a node holding its value, links to
// its parents and a backward closure. backward(loss) walks the graph in
// reverse topological order, visiting each node exactly once, and *adds* the
// pass result into each reachable node's persistent grad. Gradients therefore
// accumulate across backward calls until zero_grad().
//
// Tensors are rank-2 throughout (vectors are 1 x n, scalars 1 x 1). All
// arithmetic is float64; inner loops go through kernels::active().

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace maskdiff {

// Allocator that skips value-initialization: op outputs are fully
// overwritten, so the default zero fill is pure memory traffic.
template <class T>
struct UninitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = UninitAllocator<U>;
    };
    template <class U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};
using DataVec = std::vector<double, UninitAllocator<double>>;

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    int rows = 0;
    int cols = 0;
    DataVec value;
    DataVec grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    // pbufs aligns with parents; entries are null for parents outside the pass.
    std::function<void(const TensorNode& out, const double* gout,
                       const std::vector<std::vector<double>*>& pbufs)>
        backprop;

    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor full(int rows, int cols, double v, bool requires_grad = false);
    static Tensor from_data(int rows, int cols, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    std::size_t size() const { return node_->size(); }

    std::span<double> data() { return node_->value; }
    std::span<const double> data() const { return node_->value; }
    double at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
    double value() const;  // scalar tensors only

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    bool grad_allocated() const { return !node_->grad.empty(); }
    std::span<double> grad();              // allocates zeros on demand
    std::span<const double> grad() const;  // throws if never populated
    void zero_grad();

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// Runs reverse-mode over the graph that produced `loss` (must be scalar).
void backward(const Tensor& loss);

// Ops with no_grad in scope build no graph (forward values only).
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k)x(k,n)
// scale * (a * b^T), b is (n,k)
Tensor matmul_nt(const Tensor& a, const Tensor& b, double scale = 1.0);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor add_rowvec(const Tensor& m, const Tensor& v);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, int rows, int cols);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
Tensor embedding_rows(const Tensor& table, std::span<const int> ids);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// out[i] = a(rows[i], cols[i])
Tensor gather(const Tensor& a, std::span<const int> rows, std::span<const int> cols);
// sum_i a_i * w_i with constant weights
Tensor weighted_sum(const Tensor& a, std::span<const double> w);
// -sum_r row_w[r] * sum_c q(r,c) * logp(r,c), q and row_w constant
Tensor soft_cross_entropy_rows(const Tensor& logp, const std::vector<double>& q,
                               const std::vector<double>& row_w);
// -sum_r row_w[r] * sum_c exp(logp) * logp  (entropy read off log-probabilities)
Tensor entropy_rows(const Tensor& logp, const std::vector<double>& row_w);
// -log softmax(logits)[target]; logits is 1 x K
Tensor cross_entropy(const Tensor& logits, int target);
// mean_i of -(y_i log p_i + (1-y_i) log(1-p_i)); caller keeps p away from {0,1}
Tensor binary_cross_entropy(const Tensor& p, const std::vector<double>& y);

inline Tensor sum_list(std::span<const Tensor> terms) {
    Tensor acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

// ---- parameters ----

struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
    std::uint64_t update_count = 0;  // bumped on every in-place optimizer write
};

}  // namespace maskdiff
