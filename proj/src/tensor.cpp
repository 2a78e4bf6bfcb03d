#include "modot/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace modot {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace {

bool g_grad_enabled = true;

// All matrix products go through aligned copies. Eigen picks vector kernels
// and peeling based on operand addresses, so mapping tensor storage directly
// would let heap placement change the accumulation order (and the low-order
// bits) from run to run. Copies pin the alignment; elementwise writeback is
// order-independent and safe on unaligned destinations.
enum class GemmOp { Assign, Accumulate };

// dst(M x N) op= A' * B' with A' = ta ? (K x M buffer)^T : (M x K buffer)
// and B' = tb ? (N x K buffer)^T : (K x N buffer).
void gemm(const double* a, bool ta, const double* b, bool tb, int64_t M, int64_t K,
          int64_t N, double* dst, GemmOp op) {
    MatRM A = ta ? MatRM(CMapRM(a, K, M).transpose()) : MatRM(CMapRM(a, M, K));
    MatRM B = tb ? MatRM(CMapRM(b, N, K).transpose()) : MatRM(CMapRM(b, K, N));
    MatRM O(M, N);
    O.noalias() = A * B;
    MapRM D(dst, M, N);
    if (op == GemmOp::Assign)
        D = O;
    else
        D += O;
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

NodePtr make_node(std::vector<int64_t> shape) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data.assign(static_cast<size_t>(node->numel()), 0.0);
    return node;
}

bool any_requires_grad(const std::vector<Tensor>& parents) {
    for (const auto& p : parents)
        if (p.defined() && p.requires_grad()) return true;
    return false;
}

// Attaches graph metadata if recording is on and some parent needs grads.
void attach(const Tensor& out, std::vector<Tensor> parents,
            std::function<void(TensorNode&)> backward_fn) {
    if (!g_grad_enabled || !any_requires_grad(parents)) return;
    out.node()->requires_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backward_fn = std::move(backward_fn);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch");
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Tensor Tensor::zeros(const std::vector<int64_t>& shape, bool requires_grad) {
    auto n = make_node(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::full(const std::vector<int64_t>& shape, double value, bool requires_grad) {
    auto n = make_node(shape);
    std::fill(n->data.begin(), n->data.end(), value);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_data(const std::vector<int64_t>& shape, std::vector<double> data,
                         bool requires_grad) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw TensorError("from_data: size mismatch");
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

const std::vector<int64_t>& Tensor::shape() const { return node_->shape; }
int64_t Tensor::numel() const { return node_->numel(); }
std::vector<double>& Tensor::data() { return node_->data; }
const std::vector<double>& Tensor::data() const { return node_->data; }
std::vector<double>& Tensor::grad() {
    node_->ensure_grad();
    return node_->grad;
}
bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool v) { node_->requires_grad = v; }

double Tensor::item() const {
    if (numel() != 1) throw TensorError("item: tensor is not scalar");
    return node_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const auto& s = shape();
    if (idx.size() != s.size()) throw TensorError("at: rank mismatch");
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        off = off * s[k] + i;
        ++k;
    }
    return node_->data[static_cast<size_t>(off)];
}

void Tensor::zero_grad() const {
    node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->data = node_->data;
    return Tensor(n);
}

Tensor Tensor::clone() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = node_->requires_grad;
    return Tensor(n);
}

void Tensor::backward() const {
    if (numel() != 1) throw TensorError("backward: root must be scalar");
    // Topological order by iterative post-order DFS.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            TensorNode* p = n->parents[i].node().get();
            ++i;
            if (p && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
}

// ------------------------------------------------------------------
// elementwise
// ------------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd, const char* /*name*/) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& ad = a.data();
    auto& od = out.data();
    for (size_t i = 0; i < ad.size(); ++i) od[i] = fwd(ad[i]);
    attach(out, {a}, [a, bwd](TensorNode& n) {
        auto pa = a.node();
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i)
            pa->grad[i] += n.grad[i] * bwd(pa->data[i], n.data[i]);
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] + bd[i];
    attach(out, {a, b}, [a, b](TensorNode& n) {
        for (const Tensor& p : {a, b}) {
            auto pn = p.node();
            if (!pn->requires_grad) continue;
            pn->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pn->grad[i] += n.grad[i];
        }
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.data().size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    attach(out, {a, b}, [a, b](TensorNode& n) {
        auto pa = a.node();
        auto pb = b.node();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.data().size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    attach(out, {a, b}, [a, b](TensorNode& n) {
        auto pa = a.node();
        auto pb = b.node();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->data[i];
        }
    });
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tensor out = Tensor::zeros(a.shape());
    for (size_t i = 0; i < a.data().size(); ++i) out.data()[i] = a.data()[i] / b.data()[i];
    attach(out, {a, b}, [a, b](TensorNode& n) {
        auto pa = a.node();
        auto pb = b.node();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pb->data[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i)
                pb->grad[i] -= n.grad[i] * pa->data[i] / (pb->data[i] * pb->data[i]);
        }
    });
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x + s; },
                    [](double, double) { return 1.0; }, "add_scalar");
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x * s; },
                    [s](double, double) { return s; }, "mul_scalar");
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                    [](double x, double) { return x > 0 ? 1.0 : 0.0; }, "relu");
}

Tensor gelu(const Tensor& a) {
    // tanh approximation
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    auto fwd = [](double x) {
        double t = std::tanh(k * (x + 0.044715 * x * x * x));
        return 0.5 * x * (1.0 + t);
    };
    auto bwd = [](double x, double) {
        double u = k * (x + 0.044715 * x * x * x);
        double t = std::tanh(u);
        double du = k * (1.0 + 3 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    };
    return unary_op(a, fwd, bwd, "gelu");
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a,
                    [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Tensor log_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; }, "log");
}

Tensor exp_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; }, "exp");
}

Tensor sqrt_t(const Tensor& a) {
    // derivative guarded at 0: chain inputs there are themselves zero-gradient
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double x, double) { return x > 1e-300 ? 0.5 / std::sqrt(x) : 0.0; },
                    "sqrt");
}

Tensor abs_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::fabs(x); },
                    [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); },
                    "abs");
}

Tensor square(const Tensor& a) {
    return unary_op(a, [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; }, "square");
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; },
                    "clamp");
}

// ------------------------------------------------------------------
// reductions
// ------------------------------------------------------------------

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out = Tensor::from_data({1}, {s});
    attach(out, {a}, [a](TensorNode& n) {
        auto pa = a.node();
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (auto& g : pa->grad) g += n.grad[0];
    });
    return out;
}

Tensor mean(const Tensor& a) {
    return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// ------------------------------------------------------------------
// shape
// ------------------------------------------------------------------

Tensor reshape(const Tensor& a, const std::vector<int64_t>& shape) {
    if (shape_numel(shape) != a.numel()) throw TensorError("reshape: numel mismatch");
    Tensor out = Tensor::from_data(shape, a.data());
    attach(out, {a}, [a](TensorNode& n) {
        auto pa = a.node();
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    });
    return out;
}

namespace {

std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * shape[static_cast<size_t>(i) + 1];
    return s;
}

// Maps flat output index -> flat input index for a permutation.
std::vector<int64_t> permute_index_map(const std::vector<int64_t>& in_shape,
                                       const std::vector<int>& axes) {
    const size_t r = in_shape.size();
    std::vector<int64_t> out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[static_cast<size_t>(axes[i])];
    auto in_strides = strides_of(in_shape);
    auto out_strides = strides_of(out_shape);
    int64_t n = shape_numel(in_shape);
    std::vector<int64_t> map(static_cast<size_t>(n));
    for (int64_t o = 0; o < n; ++o) {
        int64_t rem = o, in_off = 0;
        for (size_t i = 0; i < r; ++i) {
            int64_t c = rem / out_strides[i];
            rem -= c * out_strides[i];
            in_off += c * in_strides[static_cast<size_t>(axes[i])];
        }
        map[static_cast<size_t>(o)] = in_off;
    }
    return map;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
    if (axes.size() != a.shape().size()) throw TensorError("permute: rank mismatch");
    std::vector<int64_t> out_shape(axes.size());
    for (size_t i = 0; i < axes.size(); ++i)
        out_shape[i] = a.shape()[static_cast<size_t>(axes[i])];
    auto map = permute_index_map(a.shape(), axes);
    Tensor out = Tensor::zeros(out_shape);
    const auto& ad = a.data();
    auto& od = out.data();
    for (size_t o = 0; o < map.size(); ++o) od[o] = ad[static_cast<size_t>(map[o])];
    attach(out, {a}, [a, map = std::move(map)](TensorNode& n) {
        auto pa = a.node();
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t o = 0; o < map.size(); ++o)
            pa->grad[static_cast<size_t>(map[o])] += n.grad[o];
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw TensorError("concat: empty input");
    const auto& s0 = parts[0].shape();
    const size_t r = s0.size();
    const size_t ax = static_cast<size_t>(axis);
    std::vector<int64_t> out_shape = s0;
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != r) throw TensorError("concat: rank mismatch");
        for (size_t i = 0; i < r; ++i)
            if (i != ax && p.shape()[i] != s0[i]) throw TensorError("concat: shape mismatch");
        out_shape[ax] += p.shape()[ax];
    }
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < ax; ++i) outer *= s0[i];
    for (size_t i = ax + 1; i < r; ++i) inner *= s0[i];

    Tensor out = Tensor::zeros(out_shape);
    auto& od = out.data();
    int64_t out_ax = out_shape[ax];
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t pax = p.shape()[ax];
        const auto& pd = p.data();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t c = 0; c < pax; ++c)
                std::copy_n(pd.begin() + (o * pax + c) * inner, inner,
                            od.begin() + (o * out_ax + off + c) * inner);
        off += pax;
    }
    attach(out, parts, [parts, outer, inner, out_ax](TensorNode& n) {
        int64_t off = 0;
        for (const auto& p : parts) {
            auto pn = p.node();
            int64_t pax = pn->numel() / (outer * inner);
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t c = 0; c < pax; ++c) {
                        const double* src = n.grad.data() + (o * out_ax + off + c) * inner;
                        double* dst = pn->grad.data() + (o * pax + c) * inner;
                        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                    }
            }
            off += pax;
        }
    });
    return out;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    const auto& s = a.shape();
    const size_t ax = static_cast<size_t>(axis);
    if (start < 0 || start + len > s[ax]) throw TensorError("slice: out of range");
    int64_t outer = 1, inner = 1;
    for (size_t i = 0; i < ax; ++i) outer *= s[i];
    for (size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
    std::vector<int64_t> out_shape = s;
    out_shape[ax] = len;
    Tensor out = Tensor::zeros(out_shape);
    const auto& ad = a.data();
    auto& od = out.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(ad.begin() + (o * s[ax] + start) * inner, len * inner,
                    od.begin() + o * len * inner);
    int64_t sax = s[ax];
    attach(out, {a}, [a, outer, inner, sax, start, len](TensorNode& n) {
        auto pa = a.node();
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = n.grad.data() + o * len * inner;
            double* dst = pa->grad.data() + (o * sax + start) * inner;
            for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
    return out;
}

Tensor pad2d(const Tensor& a, int64_t top, int64_t bottom, int64_t left, int64_t right) {
    if (a.ndim() != 3) throw TensorError("pad2d: expected (C,H,W)");
    int64_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
    int64_t Ho = H + top + bottom, Wo = W + left + right;
    if (Ho <= 0 || Wo <= 0) throw TensorError("pad2d: empty result");
    Tensor out = Tensor::zeros({C, Ho, Wo});
    const auto& ad = a.data();
    auto& od = out.data();
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i) {
            int64_t oi = i + top;
            if (oi < 0 || oi >= Ho) continue;
            for (int64_t j = 0; j < W; ++j) {
                int64_t oj = j + left;
                if (oj < 0 || oj >= Wo) continue;
                od[static_cast<size_t>((c * Ho + oi) * Wo + oj)] =
                    ad[static_cast<size_t>((c * H + i) * W + j)];
            }
        }
    attach(out, {a}, [a, C, H, W, Ho, Wo, top, left](TensorNode& n) {
        auto pa = a.node();
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < H; ++i) {
                int64_t oi = i + top;
                if (oi < 0 || oi >= Ho) continue;
                for (int64_t j = 0; j < W; ++j) {
                    int64_t oj = j + left;
                    if (oj < 0 || oj >= Wo) continue;
                    pa->grad[static_cast<size_t>((c * H + i) * W + j)] +=
                        n.grad[static_cast<size_t>((c * Ho + oi) * Wo + oj)];
                }
            }
    });
    return out;
}

// ------------------------------------------------------------------
// linear algebra
// ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw TensorError("matmul: bad shapes");
    int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    Tensor out = Tensor::zeros({M, N});
    gemm(a.data().data(), false, b.data().data(), false, M, K, N, out.data().data(),
         GemmOp::Assign);
    attach(out, {a, b}, [a, b, M, K, N](TensorNode& n) {
        auto pa = a.node();
        auto pb = b.node();
        if (pa->requires_grad) {
            pa->ensure_grad();
            gemm(n.grad.data(), false, pb->data.data(), true, M, N, K, pa->grad.data(),
                 GemmOp::Accumulate);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            gemm(pa->data.data(), true, n.grad.data(), false, K, M, N, pb->grad.data(),
                 GemmOp::Accumulate);
        }
    });
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw TensorError("bmm: bad shapes");
    int64_t B_ = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    Tensor out = Tensor::zeros({B_, M, N});
    for (int64_t i = 0; i < B_; ++i)
        gemm(a.data().data() + i * M * K, false, b.data().data() + i * K * N, false, M, K,
             N, out.data().data() + i * M * N, GemmOp::Assign);
    attach(out, {a, b}, [a, b, B_, M, K, N](TensorNode& n) {
        auto pa = a.node();
        auto pb = b.node();
        if (pa->requires_grad) pa->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        for (int64_t i = 0; i < B_; ++i) {
            const double* g = n.grad.data() + i * M * N;
            if (pa->requires_grad)
                gemm(g, false, pb->data.data() + i * K * N, true, M, N, K,
                     pa->grad.data() + i * M * K, GemmOp::Accumulate);
            if (pb->requires_grad)
                gemm(pa->data.data() + i * M * K, true, g, false, K, M, N,
                     pb->grad.data() + i * K * N, GemmOp::Accumulate);
        }
    });
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || x.dim(1) != b.dim(0))
        throw TensorError("add_rowvec: bad shapes");
    int64_t T = x.dim(0), C = x.dim(1);
    Tensor out = Tensor::zeros({T, C});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t c = 0; c < C; ++c)
            out.data()[static_cast<size_t>(t * C + c)] =
                x.data()[static_cast<size_t>(t * C + c)] + b.data()[static_cast<size_t>(c)];
    attach(out, {x, b}, [x, b, T, C](TensorNode& n) {
        auto px = x.node();
        auto pb = b.node();
        if (px->requires_grad) {
            px->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) px->grad[i] += n.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t t = 0; t < T; ++t)
                for (int64_t c = 0; c < C; ++c)
                    pb->grad[static_cast<size_t>(c)] += n.grad[static_cast<size_t>(t * C + c)];
        }
    });
    return out;
}

Tensor softmax_lastdim(const Tensor& a) {
    const auto& s = a.shape();
    int64_t C = s.back();
    int64_t R = a.numel() / C;
    Tensor out = Tensor::zeros(s);
    const auto& ad = a.data();
    auto& od = out.data();
    for (int64_t r = 0; r < R; ++r) {
        const double* in = ad.data() + r * C;
        double* o = od.data() + r * C;
        double mx = *std::max_element(in, in + C);
        double z = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            o[c] = std::exp(in[c] - mx);
            z += o[c];
        }
        for (int64_t c = 0; c < C; ++c) o[c] /= z;
    }
    attach(out, {a}, [a, R, C](TensorNode& n) {
        auto pa = a.node();
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (int64_t r = 0; r < R; ++r) {
            const double* y = n.data.data() + r * C;
            const double* g = n.grad.data() + r * C;
            double dot = 0.0;
            for (int64_t c = 0; c < C; ++c) dot += y[c] * g[c];
            double* pg = pa->grad.data() + r * C;
            for (int64_t c = 0; c < C; ++c) pg[c] += y[c] * (g[c] - dot);
        }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    int64_t C = x.shape().back();
    if (gamma.numel() != C || beta.numel() != C) throw TensorError("layer_norm: bad params");
    int64_t R = x.numel() / C;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> mu(static_cast<size_t>(R)), istd(static_cast<size_t>(R));
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t r = 0; r < R; ++r) {
        const double* in = xd.data() + r * C;
        double m = 0.0;
        for (int64_t c = 0; c < C; ++c) m += in[c];
        m /= C;
        double v = 0.0;
        for (int64_t c = 0; c < C; ++c) v += (in[c] - m) * (in[c] - m);
        v /= C;
        double is = 1.0 / std::sqrt(v + eps);
        mu[static_cast<size_t>(r)] = m;
        istd[static_cast<size_t>(r)] = is;
        double* o = od.data() + r * C;
        for (int64_t c = 0; c < C; ++c)
            o[c] = (in[c] - m) * is * gamma.data()[static_cast<size_t>(c)] +
                   beta.data()[static_cast<size_t>(c)];
    }
    attach(out, {x, gamma, beta},
           [x, gamma, beta, R, C, mu = std::move(mu), istd = std::move(istd)](TensorNode& n) {
               auto px = x.node();
               auto pg = gamma.node();
               auto pb = beta.node();
               if (px->requires_grad) px->ensure_grad();
               if (pg->requires_grad) pg->ensure_grad();
               if (pb->requires_grad) pb->ensure_grad();
               for (int64_t r = 0; r < R; ++r) {
                   const double* in = px->data.data() + r * C;
                   const double* g = n.grad.data() + r * C;
                   double m = mu[static_cast<size_t>(r)], is = istd[static_cast<size_t>(r)];
                   if (pg->requires_grad || pb->requires_grad) {
                       for (int64_t c = 0; c < C; ++c) {
                           double xhat = (in[c] - m) * is;
                           if (pg->requires_grad) pg->grad[static_cast<size_t>(c)] += g[c] * xhat;
                           if (pb->requires_grad) pb->grad[static_cast<size_t>(c)] += g[c];
                       }
                   }
                   if (px->requires_grad) {
                       double sum_gy = 0.0, sum_gyx = 0.0;
                       for (int64_t c = 0; c < C; ++c) {
                           double gy = g[c] * gamma.data()[static_cast<size_t>(c)];
                           double xhat = (in[c] - m) * is;
                           sum_gy += gy;
                           sum_gyx += gy * xhat;
                       }
                       double* gx = px->grad.data() + r * C;
                       for (int64_t c = 0; c < C; ++c) {
                           double gy = g[c] * gamma.data()[static_cast<size_t>(c)];
                           double xhat = (in[c] - m) * is;
                           gx[c] += is * (gy - sum_gy / C - xhat * sum_gyx / C);
                       }
                   }
               }
           });
    return out;
}

// ------------------------------------------------------------------
// image ops (CHW)
// ------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int stride, int pad_h, int pad_w) {
    if (x.ndim() != 3 || w.ndim() != 4) throw TensorError("conv2d: bad ranks");
    int64_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin) throw TensorError("conv2d: channel mismatch");
    int64_t ph = pad_h < 0 ? kh / 2 : pad_h;
    int64_t pw = pad_w < 0 ? kw / 2 : pad_w;
    int64_t Ho = (H + 2 * ph - kh) / stride + 1;
    int64_t Wo = (W + 2 * pw - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw TensorError("conv2d: empty output");
    int64_t K = Cin * kh * kw, P = Ho * Wo;

    auto cols = std::make_shared<std::vector<double>>(static_cast<size_t>(K * P), 0.0);
    const auto& xd = x.data();
    for (int64_t c = 0; c < Cin; ++c)
        for (int64_t ki = 0; ki < kh; ++ki)
            for (int64_t kj = 0; kj < kw; ++kj) {
                int64_t row = (c * kh + ki) * kw + kj;
                double* dst = cols->data() + row * P;
                for (int64_t oi = 0; oi < Ho; ++oi) {
                    int64_t ii = oi * stride + ki - ph;
                    if (ii < 0 || ii >= H) continue;
                    const double* src = xd.data() + (c * H + ii) * W;
                    for (int64_t oj = 0; oj < Wo; ++oj) {
                        int64_t jj = oj * stride + kj - pw;
                        if (jj >= 0 && jj < W) dst[oi * Wo + oj] = src[jj];
                    }
                }
            }

    Tensor out = Tensor::zeros({Cout, Ho, Wo});
    gemm(w.data().data(), false, cols->data(), false, Cout, K, P, out.data().data(),
         GemmOp::Assign);
    if (b.defined()) {
        if (b.numel() != Cout) throw TensorError("conv2d: bad bias");
        for (int64_t c = 0; c < Cout; ++c) {
            double bv = b.data()[static_cast<size_t>(c)];
            double* row = out.data().data() + c * P;
            for (int64_t p = 0; p < P; ++p) row[p] += bv;
        }
    }
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b}
                                              : std::vector<Tensor>{x, w};
    attach(out, parents,
           [x, w, b, cols, Cin, H, W, Cout, kh, kw, ph, pw, Ho, Wo, K, P,
            stride](TensorNode& n) {
               auto pw_node = w.node();
               if (pw_node->requires_grad) {
                   pw_node->ensure_grad();
                   gemm(n.grad.data(), false, cols->data(), true, Cout, P, K,
                        pw_node->grad.data(), GemmOp::Accumulate);
               }
               if (b.defined() && b.node()->requires_grad) {
                   auto pb = b.node();
                   pb->ensure_grad();
                   for (int64_t c = 0; c < Cout; ++c) {
                       const double* row = n.grad.data() + c * P;
                       double acc = 0.0;
                       for (int64_t p = 0; p < P; ++p) acc += row[p];
                       pb->grad[static_cast<size_t>(c)] += acc;
                   }
               }
               auto px = x.node();
               if (px->requires_grad) {
                   px->ensure_grad();
                   MatRM Gcols(K, P);
                   gemm(w.data().data(), true, n.grad.data(), false, K, Cout, P,
                        Gcols.data(), GemmOp::Assign);
                   for (int64_t c = 0; c < Cin; ++c)
                       for (int64_t ki = 0; ki < kh; ++ki)
                           for (int64_t kj = 0; kj < kw; ++kj) {
                               int64_t row = (c * kh + ki) * kw + kj;
                               const double* src = Gcols.data() + row * P;
                               for (int64_t oi = 0; oi < Ho; ++oi) {
                                   int64_t ii = oi * stride + ki - ph;
                                   if (ii < 0 || ii >= H) continue;
                                   double* dst = px->grad.data() + (c * H + ii) * W;
                                   for (int64_t oj = 0; oj < Wo; ++oj) {
                                       int64_t jj = oj * stride + kj - pw;
                                       if (jj >= 0 && jj < W) dst[jj] += src[oi * Wo + oj];
                                   }
                               }
                           }
               }
           });
    return out;
}

Tensor upsample_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
    if (x.ndim() != 3) throw TensorError("upsample_bilinear: expected (C,H,W)");
    int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out = Tensor::zeros({C, out_h, out_w});
    // precompute per-axis sample positions (align_corners = false)
    struct Lerp { int64_t i0, i1; double w0, w1; };
    auto build = [](int64_t in, int64_t outn) {
        std::vector<Lerp> v(static_cast<size_t>(outn));
        double scale = static_cast<double>(in) / static_cast<double>(outn);
        for (int64_t o = 0; o < outn; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
            int64_t i0 = static_cast<int64_t>(std::floor(src));
            int64_t i1 = std::min(i0 + 1, in - 1);
            double f = src - i0;
            v[static_cast<size_t>(o)] = {i0, i1, 1.0 - f, f};
        }
        return v;
    };
    auto ly = build(H, out_h);
    auto lx = build(W, out_w);
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < out_h; ++i) {
            const Lerp& a = ly[static_cast<size_t>(i)];
            const double* r0 = xd.data() + (c * H + a.i0) * W;
            const double* r1 = xd.data() + (c * H + a.i1) * W;
            double* o = od.data() + (c * out_h + i) * out_w;
            for (int64_t j = 0; j < out_w; ++j) {
                const Lerp& bx = lx[static_cast<size_t>(j)];
                o[j] = a.w0 * (bx.w0 * r0[bx.i0] + bx.w1 * r0[bx.i1]) +
                       a.w1 * (bx.w0 * r1[bx.i0] + bx.w1 * r1[bx.i1]);
            }
        }
    attach(out, {x}, [x, C, H, W, out_h, out_w, ly = std::move(ly), lx = std::move(lx)](TensorNode& n) {
        auto px = x.node();
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < out_h; ++i) {
                const auto& a = ly[static_cast<size_t>(i)];
                double* g0 = px->grad.data() + (c * H + a.i0) * W;
                double* g1 = px->grad.data() + (c * H + a.i1) * W;
                const double* g = n.grad.data() + (c * out_h + i) * out_w;
                for (int64_t j = 0; j < out_w; ++j) {
                    const auto& bx = lx[static_cast<size_t>(j)];
                    g0[bx.i0] += g[j] * a.w0 * bx.w0;
                    g0[bx.i1] += g[j] * a.w0 * bx.w1;
                    g1[bx.i0] += g[j] * a.w1 * bx.w0;
                    g1[bx.i1] += g[j] * a.w1 * bx.w1;
                }
            }
    });
    return out;
}

Tensor adaptive_avg_pool(const Tensor& x, int64_t out_h, int64_t out_w) {
    if (x.ndim() != 3) throw TensorError("adaptive_avg_pool: expected (C,H,W)");
    int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    auto bin = [](int64_t i, int64_t outn, int64_t in) {
        int64_t s = (i * in) / outn;
        int64_t e = ((i + 1) * in + outn - 1) / outn;
        return std::pair<int64_t, int64_t>(s, e);
    };
    Tensor out = Tensor::zeros({C, out_h, out_w});
    const auto& xd = x.data();
    auto& od = out.data();
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < out_h; ++i) {
            auto [is, ie] = bin(i, out_h, H);
            for (int64_t j = 0; j < out_w; ++j) {
                auto [js, je] = bin(j, out_w, W);
                double s = 0.0;
                for (int64_t ii = is; ii < ie; ++ii)
                    for (int64_t jj = js; jj < je; ++jj)
                        s += xd[static_cast<size_t>((c * H + ii) * W + jj)];
                od[static_cast<size_t>((c * out_h + i) * out_w + j)] =
                    s / static_cast<double>((ie - is) * (je - js));
            }
        }
    attach(out, {x}, [x, C, H, W, out_h, out_w, bin](TensorNode& n) {
        auto px = x.node();
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < out_h; ++i) {
                auto [is, ie] = bin(i, out_h, H);
                for (int64_t j = 0; j < out_w; ++j) {
                    auto [js, je] = bin(j, out_w, W);
                    double g = n.grad[static_cast<size_t>((c * out_h + i) * out_w + j)] /
                               static_cast<double>((ie - is) * (je - js));
                    for (int64_t ii = is; ii < ie; ++ii)
                        for (int64_t jj = js; jj < je; ++jj)
                            px->grad[static_cast<size_t>((c * H + ii) * W + jj)] += g;
                }
            }
    });
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 3) throw TensorError("global_avg_pool: expected (C,H,W)");
    int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor out = Tensor::zeros({C});
    for (int64_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (int64_t i = 0; i < HW; ++i) s += x.data()[static_cast<size_t>(c * HW + i)];
        out.data()[static_cast<size_t>(c)] = s / static_cast<double>(HW);
    }
    attach(out, {x}, [x, C, HW](TensorNode& n) {
        auto px = x.node();
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t c = 0; c < C; ++c) {
            double g = n.grad[static_cast<size_t>(c)] / static_cast<double>(HW);
            for (int64_t i = 0; i < HW; ++i) px->grad[static_cast<size_t>(c * HW + i)] += g;
        }
    });
    return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& w) {
    if (x.ndim() != 3 || w.numel() != x.dim(0)) throw TensorError("scale_channels: bad shapes");
    int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t c = 0; c < C; ++c) {
        double s = w.data()[static_cast<size_t>(c)];
        for (int64_t i = 0; i < HW; ++i)
            out.data()[static_cast<size_t>(c * HW + i)] =
                x.data()[static_cast<size_t>(c * HW + i)] * s;
    }
    attach(out, {x, w}, [x, w, C, HW](TensorNode& n) {
        auto px = x.node();
        auto pw = w.node();
        if (px->requires_grad) {
            px->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                double s = pw->data[static_cast<size_t>(c)];
                for (int64_t i = 0; i < HW; ++i)
                    px->grad[static_cast<size_t>(c * HW + i)] +=
                        n.grad[static_cast<size_t>(c * HW + i)] * s;
            }
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                double g = 0.0;
                for (int64_t i = 0; i < HW; ++i)
                    g += n.grad[static_cast<size_t>(c * HW + i)] *
                         px->data[static_cast<size_t>(c * HW + i)];
                pw->grad[static_cast<size_t>(c)] += g;
            }
        }
    });
    return out;
}

Tensor channel_mean(const Tensor& x) {
    if (x.ndim() != 3) throw TensorError("channel_mean: expected (C,H,W)");
    int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor out = Tensor::zeros({1, x.dim(1), x.dim(2)});
    for (int64_t i = 0; i < HW; ++i) {
        double s = 0.0;
        for (int64_t c = 0; c < C; ++c) s += x.data()[static_cast<size_t>(c * HW + i)];
        out.data()[static_cast<size_t>(i)] = s / static_cast<double>(C);
    }
    attach(out, {x}, [x, C, HW](TensorNode& n) {
        auto px = x.node();
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t i = 0; i < HW; ++i) {
            double g = n.grad[static_cast<size_t>(i)] / static_cast<double>(C);
            for (int64_t c = 0; c < C; ++c) px->grad[static_cast<size_t>(c * HW + i)] += g;
        }
    });
    return out;
}

Tensor channel_max(const Tensor& x) {
    if (x.ndim() != 3) throw TensorError("channel_max: expected (C,H,W)");
    int64_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor out = Tensor::zeros({1, x.dim(1), x.dim(2)});
    std::vector<int64_t> arg(static_cast<size_t>(HW));
    for (int64_t i = 0; i < HW; ++i) {
        double best = x.data()[static_cast<size_t>(i)];
        int64_t bc = 0;
        for (int64_t c = 1; c < C; ++c) {
            double v = x.data()[static_cast<size_t>(c * HW + i)];
            if (v > best) { best = v; bc = c; }
        }
        out.data()[static_cast<size_t>(i)] = best;
        arg[static_cast<size_t>(i)] = bc;
    }
    attach(out, {x}, [x, HW, arg = std::move(arg)](TensorNode& n) {
        auto px = x.node();
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t i = 0; i < HW; ++i)
            px->grad[static_cast<size_t>(arg[static_cast<size_t>(i)] * HW + i)] +=
                n.grad[static_cast<size_t>(i)];
    });
    return out;
}

Tensor shift_replicate(const Tensor& x, int dy, int dx) {
    if (x.ndim() != 2) throw TensorError("shift_replicate: expected (H,W)");
    int64_t H = x.dim(0), W = x.dim(1);
    Tensor out = Tensor::zeros({H, W});
    auto cl = [](int64_t v, int64_t hi) { return std::max<int64_t>(0, std::min(v, hi - 1)); };
    for (int64_t i = 0; i < H; ++i) {
        int64_t si = cl(i + dy, H);
        for (int64_t j = 0; j < W; ++j)
            out.data()[static_cast<size_t>(i * W + j)] =
                x.data()[static_cast<size_t>(si * W + cl(j + dx, W))];
    }
    attach(out, {x}, [x, H, W, dy, dx, cl](TensorNode& n) {
        auto px = x.node();
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (int64_t i = 0; i < H; ++i) {
            int64_t si = cl(i + dy, H);
            for (int64_t j = 0; j < W; ++j)
                px->grad[static_cast<size_t>(si * W + cl(j + dx, W))] +=
                    n.grad[static_cast<size_t>(i * W + j)];
        }
    });
    return out;
}

}  // namespace modot
