#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace modot {

// Reverse-mode autodiff over dense double tensors. Single-threaded by
// construction; all ops are deterministic.

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(const std::vector<int64_t>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<int64_t>& shape, double value, bool requires_grad = false);
    static Tensor from_data(const std::vector<int64_t>& shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const;
    int64_t numel() const;
    int64_t dim(int i) const { return shape().at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape().size()); }

    std::vector<double>& data();
    const std::vector<double>& data() const;
    std::vector<double>& grad();

    bool requires_grad() const;
    void set_requires_grad(bool v);

    double item() const;
    double at(std::initializer_list<int64_t> idx) const;

    // Runs reverse-mode accumulation from this scalar.
    void backward() const;
    void zero_grad() const;

    Tensor detach() const;
    Tensor clone() const;

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<Tensor> parents;
    std::function<void(TensorNode&)> backward_fn;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    void ensure_grad() {
        if (grad.empty()) grad.assign(static_cast<size_t>(numel()), 0.0);
    }
};

// Graph recording toggle (inference fast path).
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, const std::vector<int64_t>& shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
// Zero-pads / crops the two trailing spatial axes of a (C,H,W) tensor.
Tensor pad2d(const Tensor& a, int64_t top, int64_t bottom, int64_t left, int64_t right);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);                 // (M,K)x(K,N)
Tensor bmm(const Tensor& a, const Tensor& b);                    // (B,M,K)x(B,K,N)
Tensor add_rowvec(const Tensor& x, const Tensor& b);             // (T,C)+(C)
Tensor softmax_lastdim(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- image ops, CHW layout ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int stride = 1, int pad_h = -1, int pad_w = -1);   // pad -1 => k/2
Tensor upsample_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor adaptive_avg_pool(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor global_avg_pool(const Tensor& x);                         // (C,H,W)->(C)
Tensor scale_channels(const Tensor& x, const Tensor& w);         // x(C,H,W)*w(C)
Tensor channel_mean(const Tensor& x);                            // (C,H,W)->(1,H,W)
Tensor channel_max(const Tensor& x);                             // (C,H,W)->(1,H,W)
// out(i,j) = x(clamp(i+dy), clamp(j+dx)); replicate borders. x is (H,W).
Tensor shift_replicate(const Tensor& x, int dy, int dx);

}  // namespace modot
