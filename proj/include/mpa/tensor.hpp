#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "mpa/kernels.hpp"

// Reverse-mode autodiff over dense tensors, sized for the segmentation
// pipeline: rank <= 4, no broadcasting. A Tensor is a cheap handle onto a
// graph node; ops record their inputs and a backprop closure, backward()
// walks the recorded graph in reverse topological order.

namespace mpa {

inline constexpr double kNormEps = 1e-8;
inline constexpr double kBceEps = 1e-7;

template <class Real>
struct TensorNode {
    std::vector<int> shape;
    std::vector<Real> data;
    bool requires_grad = false;
    std::vector<Real> grad;  // empty until first accumulation

    // Graph record: operation tag, input references, backprop closure.
    // Values the backward pass needs are captured in the closure.
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode&)> backprop;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (const int d : shape) {
            n *= d;
        }
        return n;
    }

    std::vector<Real>& grad_buf() {
        if (grad.empty()) {
            grad.assign(static_cast<std::size_t>(numel()), Real(0));
        }
        return grad;
    }
};

template <class Real>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode<Real>> node) : node_(std::move(node)) {}

    static Tensor from_data(std::vector<Real> data, std::vector<int> shape,
                            bool requires_grad = false) {
        auto node = std::make_shared<TensorNode<Real>>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        if (static_cast<std::int64_t>(node->data.size()) != node->numel()) {
            throw std::invalid_argument("tensor data size does not match shape");
        }
        return Tensor(std::move(node));
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        std::int64_t n = 1;
        for (const int d : shape) {
            n *= d;
        }
        return from_data(std::vector<Real>(static_cast<std::size_t>(n), Real(0)),
                         std::move(shape), requires_grad);
    }

    static Tensor full(std::vector<int> shape, Real value, bool requires_grad = false) {
        std::int64_t n = 1;
        for (const int d : shape) {
            n *= d;
        }
        return from_data(std::vector<Real>(static_cast<std::size_t>(n), value),
                         std::move(shape), requires_grad);
    }

    static Tensor scalar(Real value, bool requires_grad = false) {
        return from_data({value}, {}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<Real>& data() const { return node_->data; }
    // In-place mutation is reserved for leaves (parameter updates);
    // mutating an op output would desynchronize recorded backward state.
    std::vector<Real>& mutable_data() { return node_->data; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<Real>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->data.size(), Real(0)); }

    Real item() const {
        if (numel() != 1) {
            throw std::invalid_argument("item() requires a single-element tensor");
        }
        return node_->data[0];
    }

    // Deep copy detached from any graph.
    Tensor clone() const {
        return from_data(node_->data, node_->shape, node_->requires_grad);
    }

    std::shared_ptr<TensorNode<Real>> node() const { return node_; }

private:
    std::shared_ptr<TensorNode<Real>> node_;
};

namespace detail {

template <class Real>
Tensor<Real> make_op_result(std::vector<Real> data, std::vector<int> shape, const char* op,
                            std::vector<std::shared_ptr<TensorNode<Real>>> inputs,
                            std::function<void(TensorNode<Real>&)> backprop) {
    bool requires = false;
    for (const auto& in : inputs) {
        requires = requires || in->requires_grad;
    }
    auto out = Tensor<Real>::from_data(std::move(data), std::move(shape), requires);
    if (requires) {
        auto node = out.node();
        node->op = op;
        node->inputs = std::move(inputs);
        node->backprop = std::move(backprop);
    }
    return out;
}

template <class Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

}  // namespace detail

// Reverse topological order of the grad-requiring subgraph rooted at t
// (inputs always precede their consumers in the returned list).
template <class Real>
std::vector<TensorNode<Real>*> topo_order(const Tensor<Real>& t) {
    std::vector<TensorNode<Real>*> order;
    if (!t.defined() || !t.requires_grad()) {
        return order;
    }
    std::unordered_set<TensorNode<Real>*> visited;
    struct Frame {
        TensorNode<Real>* node;
        std::size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({t.node().get(), 0});
    visited.insert(t.node().get());
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_input < top.node->inputs.size()) {
            TensorNode<Real>* in = top.node->inputs[top.next_input].get();
            ++top.next_input;
            if (in->requires_grad && visited.insert(in).second) {
                stack.push_back({in, 0});
            }
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
    return order;
}

// Populates grads of every grad-requiring tensor reachable from loss.
// Repeated calls accumulate; pass retain_graph to keep the tape alive for
// a second pass, otherwise the graph edges are released.
template <class Real>
void backward(const Tensor<Real>& loss, bool retain_graph = false) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward: loss does not require grad");
    }
    auto order = topo_order(loss);
    loss.node()->grad_buf()[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<Real>* node = *it;
        if (node->backprop) {
            node->backprop(*node);
        }
    }
    if (!retain_graph) {
        for (TensorNode<Real>* node : order) {
            node->backprop = nullptr;
            node->inputs.clear();
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<Real> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] + b.data()[i];
    }
    return detail::make_op_result<Real>(
        std::move(out), a.shape(), "add", {a.node(), b.node()},
        [](TensorNode<Real>& self) {
            for (int j = 0; j < 2; ++j) {
                auto& in = self.inputs[static_cast<std::size_t>(j)];
                if (!in->requires_grad) {
                    continue;
                }
                auto& g = in->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            }
        });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<Real> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] * b.data()[i];
    }
    return detail::make_op_result<Real>(
        std::move(out), a.shape(), "mul", {a.node(), b.node()},
        [](TensorNode<Real>& self) {
            auto& a_in = self.inputs[0];
            auto& b_in = self.inputs[1];
            if (a_in->requires_grad) {
                auto& g = a_in->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i] * b_in->data[i];
                }
            }
            if (b_in->requires_grad) {
                auto& g = b_in->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i] * a_in->data[i];
                }
            }
        });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
    std::vector<Real> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.data()[i] * factor;
    }
    return detail::make_op_result<Real>(
        std::move(out), a.shape(), "scale", {a.node()},
        [factor](TensorNode<Real>& self) {
            auto& in = self.inputs[0];
            if (!in->requires_grad) {
                return;
            }
            auto& g = in->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * factor;
            }
        });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Real acc = Real(0);
    for (const Real v : a.data()) {
        acc += v;
    }
    return detail::make_op_result<Real>(
        {acc}, {}, "sum", {a.node()},
        [](TensorNode<Real>& self) {
            auto& in = self.inputs[0];
            if (!in->requires_grad) {
                return;
            }
            auto& g = in->grad_buf();
            const Real go = self.grad[0];
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += go;
            }
        });
}

// Fixed-order linear combination; the summation order is part of the
// contract so that loss totals are bit-reproducible.
template <class Real>
Tensor<Real> weighted_sum(const std::vector<Tensor<Real>>& terms,
                          const std::vector<Real>& coeffs) {
    if (terms.empty() || terms.size() != coeffs.size()) {
        throw std::invalid_argument("weighted_sum: terms/coeffs size mismatch");
    }
    for (const auto& t : terms) {
        detail::check_same_shape(terms[0], t, "weighted_sum");
    }
    std::vector<Real> out(terms[0].data().size(), Real(0));
    std::vector<std::shared_ptr<TensorNode<Real>>> inputs;
    inputs.reserve(terms.size());
    for (std::size_t j = 0; j < terms.size(); ++j) {
        const auto& d = terms[j].data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += coeffs[j] * d[i];
        }
        inputs.push_back(terms[j].node());
    }
    return detail::make_op_result<Real>(
        std::move(out), terms[0].shape(), "weighted_sum", std::move(inputs),
        [coeffs](TensorNode<Real>& self) {
            for (std::size_t j = 0; j < self.inputs.size(); ++j) {
                auto& in = self.inputs[j];
                if (!in->requires_grad) {
                    continue;
                }
                auto& g = in->grad_buf();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += coeffs[j] * self.grad[i];
                }
            }
        });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    std::vector<Real> out(a.data().size());
    kernels::relu_forward(a.data().data(), out.data(), out.size());
    return detail::make_op_result<Real>(
        std::move(out), a.shape(), "relu", {a.node()},
        [](TensorNode<Real>& self) {
            auto& in = self.inputs[0];
            if (!in->requires_grad) {
                return;
            }
            kernels::relu_backward(in->data.data(), self.grad.data(),
                                   in->grad_buf().data(), self.grad.size());
        });
}

// ---------------------------------------------------------------------------
// Convolution

template <class Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    int stride, int padding) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1) {
        throw std::invalid_argument("conv2d: expected x C_in*H*W, w C_out*C_in*k*k, b C_out");
    }
    const int c_in = x.dim(0);
    const int h = x.dim(1);
    const int wd = x.dim(2);
    const int c_out = w.dim(0);
    const int k = w.dim(2);
    if (w.dim(1) != c_in) {
        throw std::invalid_argument("conv2d: input channel count does not match weights");
    }
    if (w.dim(3) != k) {
        throw std::invalid_argument("conv2d: only square kernels are supported");
    }
    if (b.dim(0) != c_out) {
        throw std::invalid_argument("conv2d: bias size does not match output channels");
    }
    if (stride < 1 || padding < 0) {
        throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
    }
    if (k > h + 2 * padding || k > wd + 2 * padding) {
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    }
    const int h_out = (h + 2 * padding - k) / stride + 1;
    const int w_out = (wd + 2 * padding - k) / stride + 1;

    std::vector<Real> out(static_cast<std::size_t>(c_out) * h_out * w_out);
    kernels::conv2d_forward(x.data().data(), w.data().data(), b.data().data(), out.data(),
                            c_in, h, wd, c_out, k, stride, padding, h_out, w_out);

    return detail::make_op_result<Real>(
        std::move(out), {c_out, h_out, w_out}, "conv2d", {x.node(), w.node(), b.node()},
        [c_in, h, wd, c_out, k, stride, padding, h_out, w_out](TensorNode<Real>& self) {
            auto& xin = self.inputs[0];
            auto& win = self.inputs[1];
            auto& bin = self.inputs[2];
            if (xin->requires_grad) {
                kernels::conv2d_backward_input(self.grad.data(), win->data.data(),
                                               xin->grad_buf().data(), c_in, h, wd, c_out, k,
                                               stride, padding, h_out, w_out);
            }
            if (win->requires_grad || bin->requires_grad) {
                // dw and db come out of one pass; route each into its tensor
                // only if that tensor wants gradients.
                std::vector<Real> dw(win->data.size(), Real(0));
                std::vector<Real> db(static_cast<std::size_t>(c_out), Real(0));
                kernels::conv2d_backward_weights(self.grad.data(), xin->data.data(), dw.data(),
                                                 db.data(), c_in, h, wd, c_out, k, stride,
                                                 padding, h_out, w_out);
                if (win->requires_grad) {
                    auto& g = win->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        g[i] += dw[i];
                    }
                }
                if (bin->requires_grad) {
                    auto& g = bin->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        g[i] += db[i];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Similarity, softmax, loss

template <class Real>
Tensor<Real> cosine_map(const Tensor<Real>& features, const Tensor<Real>& prototype) {
    if (features.rank() != 3 || prototype.rank() != 1) {
        throw std::invalid_argument("cosine_map: expected features C*H*W and prototype C");
    }
    if (features.dim(0) != prototype.dim(0)) {
        throw std::invalid_argument("cosine_map: channel dimensions differ");
    }
    const int c = features.dim(0);
    const int h = features.dim(1);
    const int w = features.dim(2);
    const int pixels = h * w;
    const Real eps = static_cast<Real>(kNormEps);

    std::vector<Real> out(static_cast<std::size_t>(pixels));
    kernels::cosine_map_forward(features.data().data(), prototype.data().data(), out.data(),
                                c, pixels, eps);

    return detail::make_op_result<Real>(
        std::move(out), {h, w}, "cosine_map", {features.node(), prototype.node()},
        [c, pixels, eps](TensorNode<Real>& self) {
            auto& fin = self.inputs[0];
            auto& pin = self.inputs[1];
            Real* df = fin->requires_grad ? fin->grad_buf().data() : nullptr;
            Real* dp = pin->requires_grad ? pin->grad_buf().data() : nullptr;
            kernels::cosine_map_backward(fin->data.data(), pin->data.data(), self.grad.data(),
                                         df, dp, c, pixels, eps);
        });
}

// Two-way softmax over temperature-scaled similarity maps. Channel 1 is
// computed as 1 - channel 0, so the per-pixel channel sum is exactly 1.
template <class Real>
Tensor<Real> fgbg_softmax(const Tensor<Real>& fg_sim, const Tensor<Real>& bg_sim,
                          Real temperature) {
    detail::check_same_shape(fg_sim, bg_sim, "fgbg_softmax");
    if (fg_sim.rank() != 2) {
        throw std::invalid_argument("fgbg_softmax: expected H*W similarity maps");
    }
    if (!(temperature > Real(0))) {
        throw std::invalid_argument("fgbg_softmax: temperature must be positive");
    }
    const int h = fg_sim.dim(0);
    const int w = fg_sim.dim(1);
    const std::size_t pixels = static_cast<std::size_t>(h) * w;

    std::vector<Real> out(2 * pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        const Real z = temperature * (fg_sim.data()[i] - bg_sim.data()[i]);
        Real p;
        if (z >= Real(0)) {
            p = Real(1) / (Real(1) + std::exp(-z));
        } else {
            const Real e = std::exp(z);
            p = e / (Real(1) + e);
        }
        out[i] = p;
        out[pixels + i] = Real(1) - p;
    }
    return detail::make_op_result<Real>(
        std::move(out), {2, h, w}, "fgbg_softmax", {fg_sim.node(), bg_sim.node()},
        [pixels, temperature](TensorNode<Real>& self) {
            auto& fin = self.inputs[0];
            auto& bin = self.inputs[1];
            for (std::size_t i = 0; i < pixels; ++i) {
                const Real pf = self.data[i];
                const Real pb = self.data[pixels + i];
                const Real d = temperature * pf * pb * (self.grad[i] - self.grad[pixels + i]);
                if (fin->requires_grad) {
                    fin->grad_buf()[i] += d;
                }
                if (bin->requires_grad) {
                    bin->grad_buf()[i] -= d;
                }
            }
        });
}

// Mean binary cross entropy. Predictions are clamped to [eps, 1-eps];
// the clamp has zero subgradient outside that range. Targets are
// constants (masks), never differentiated.
template <class Real>
Tensor<Real> bce_loss(const Tensor<Real>& pred_fg, const Tensor<Real>& target) {
    detail::check_same_shape(pred_fg, target, "bce_loss");
    if (target.requires_grad()) {
        throw std::invalid_argument("bce_loss: target must not require grad");
    }
    const Real eps = static_cast<Real>(kBceEps);
    const Real hi = Real(1) - eps;
    const std::size_t n = pred_fg.data().size();
    Real acc = Real(0);
    for (std::size_t i = 0; i < n; ++i) {
        const Real p = std::min(std::max(pred_fg.data()[i], eps), hi);
        const Real t = target.data()[i];
        acc += -(t * std::log(p) + (Real(1) - t) * std::log(Real(1) - p));
    }
    acc /= static_cast<Real>(n);
    return detail::make_op_result<Real>(
        {acc}, {}, "bce_loss", {pred_fg.node(), target.node()},
        [eps, hi, n](TensorNode<Real>& self) {
            auto& pin = self.inputs[0];
            auto& tin = self.inputs[1];
            if (!pin->requires_grad) {
                return;
            }
            auto& g = pin->grad_buf();
            const Real go = self.grad[0] / static_cast<Real>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const Real praw = pin->data[i];
                if (praw <= eps || praw >= hi) {
                    continue;
                }
                const Real t = tin->data[i];
                g[i] += go * (-t / praw + (Real(1) - t) / (Real(1) - praw));
            }
        });
}

// ---------------------------------------------------------------------------
// Prototype plumbing

// Weighted channel average: out[c] = sum_p f[c,p]*m[p] / max(sum_p m[p], eps).
// Differentiable in both the features and the (possibly soft) weight map.
template <class Real>
Tensor<Real> masked_average(const Tensor<Real>& features, const Tensor<Real>& weights) {
    if (features.rank() != 3 || weights.rank() != 2) {
        throw std::invalid_argument("masked_average: expected features C*H*W and weights H*W");
    }
    if (features.dim(1) != weights.dim(0) || features.dim(2) != weights.dim(1)) {
        throw std::invalid_argument("masked_average: spatial dimensions differ");
    }
    const int c = features.dim(0);
    const std::size_t pixels = weights.data().size();
    const Real eps = static_cast<Real>(kNormEps);

    Real wsum = Real(0);
    for (const Real v : weights.data()) {
        wsum += v;
    }
    const bool above_floor = wsum > eps;
    const Real denom = above_floor ? wsum : eps;

    std::vector<Real> out(static_cast<std::size_t>(c), Real(0));
    for (int ci = 0; ci < c; ++ci) {
        const Real* f = features.data().data() + static_cast<std::size_t>(ci) * pixels;
        Real acc = Real(0);
        for (std::size_t p = 0; p < pixels; ++p) {
            acc += f[p] * weights.data()[p];
        }
        out[static_cast<std::size_t>(ci)] = acc / denom;
    }
    return detail::make_op_result<Real>(
        std::move(out), {c}, "masked_average", {features.node(), weights.node()},
        [c, pixels, denom, above_floor](TensorNode<Real>& self) {
            auto& fin = self.inputs[0];
            auto& win = self.inputs[1];
            if (fin->requires_grad) {
                auto& g = fin->grad_buf();
                for (int ci = 0; ci < c; ++ci) {
                    const Real go = self.grad[static_cast<std::size_t>(ci)] / denom;
                    Real* gf = g.data() + static_cast<std::size_t>(ci) * pixels;
                    for (std::size_t p = 0; p < pixels; ++p) {
                        gf[p] += go * win->data[p];
                    }
                }
            }
            if (win->requires_grad) {
                auto& g = win->grad_buf();
                for (std::size_t p = 0; p < pixels; ++p) {
                    Real acc = Real(0);
                    for (int ci = 0; ci < c; ++ci) {
                        const Real f = fin->data[static_cast<std::size_t>(ci) * pixels + p];
                        // At the floor the denominator is constant, so the
                        // mean-subtraction term disappears.
                        const Real centered =
                            above_floor ? f - self.data[static_cast<std::size_t>(ci)] : f;
                        acc += self.grad[static_cast<std::size_t>(ci)] * centered;
                    }
                    g[p] += acc / denom;
                }
            }
        });
}

// Elementwise gate by a constant keep mask: out = x where keep, else 0.
// Gradients pass only through kept elements.
template <class Real>
Tensor<Real> masked_keep(const Tensor<Real>& x, std::vector<std::uint8_t> keep) {
    if (keep.size() != x.data().size()) {
        throw std::invalid_argument("masked_keep: mask size mismatch");
    }
    std::vector<Real> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = keep[i] ? x.data()[i] : Real(0);
    }
    return detail::make_op_result<Real>(
        std::move(out), x.shape(), "masked_keep", {x.node()},
        [keep = std::move(keep)](TensorNode<Real>& self) {
            auto& in = self.inputs[0];
            if (!in->requires_grad) {
                return;
            }
            auto& g = in->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (keep[i]) {
                    g[i] += self.grad[i];
                }
            }
        });
}

// Slice the leading dimension of a rank-3 tensor: (C,H,W) -> (H,W).
template <class Real>
Tensor<Real> channel(const Tensor<Real>& x, int index) {
    if (x.rank() != 3) {
        throw std::invalid_argument("channel: expected a rank-3 tensor");
    }
    if (index < 0 || index >= x.dim(0)) {
        throw std::invalid_argument("channel: index out of range");
    }
    const std::size_t pixels = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    std::vector<Real> out(pixels);
    const Real* src = x.data().data() + static_cast<std::size_t>(index) * pixels;
    std::copy(src, src + pixels, out.begin());
    return detail::make_op_result<Real>(
        std::move(out), {x.dim(1), x.dim(2)}, "channel", {x.node()},
        [index, pixels](TensorNode<Real>& self) {
            auto& in = self.inputs[0];
            if (!in->requires_grad) {
                return;
            }
            Real* g = in->grad_buf().data() + static_cast<std::size_t>(index) * pixels;
            for (std::size_t i = 0; i < pixels; ++i) {
                g[i] += self.grad[i];
            }
        });
}

// ---------------------------------------------------------------------------
// Mask resampling (not differentiated; masks are constants)

// Area-average pooling of a (possibly soft) mask to target_h x target_w.
// Exact block averaging when the ratio is integral, fractional-overlap
// weighting otherwise.
template <class Real>
Tensor<Real> downsample_mask(const Tensor<Real>& mask, int target_h, int target_w) {
    if (mask.rank() != 2) {
        throw std::invalid_argument("downsample_mask: expected an H*W mask");
    }
    if (target_h < 1 || target_w < 1) {
        throw std::invalid_argument("downsample_mask: target dimensions must be positive");
    }
    const int h = mask.dim(0);
    const int w = mask.dim(1);
    if (target_h > h || target_w > w) {
        throw std::invalid_argument("downsample_mask: target larger than source");
    }
    const double sy = static_cast<double>(h) / target_h;
    const double sx = static_cast<double>(w) / target_w;
    std::vector<Real> out(static_cast<std::size_t>(target_h) * target_w, Real(0));
    for (int ty = 0; ty < target_h; ++ty) {
        const double y0 = ty * sy;
        const double y1 = (ty + 1) * sy;
        for (int tx = 0; tx < target_w; ++tx) {
            const double x0 = tx * sx;
            const double x1 = (tx + 1) * sx;
            double acc = 0.0;
            for (int r = static_cast<int>(y0); r < h && r < y1; ++r) {
                const double oy = std::min<double>(y1, r + 1) - std::max<double>(y0, r);
                if (oy <= 0.0) {
                    continue;
                }
                for (int cx = static_cast<int>(x0); cx < w && cx < x1; ++cx) {
                    const double ox = std::min<double>(x1, cx + 1) - std::max<double>(x0, cx);
                    if (ox <= 0.0) {
                        continue;
                    }
                    acc += oy * ox * static_cast<double>(mask.data()[static_cast<std::size_t>(r) * w + cx]);
                }
            }
            out[static_cast<std::size_t>(ty) * target_w + tx] = static_cast<Real>(acc / (sy * sx));
        }
    }
    return Tensor<Real>::from_data(std::move(out), {target_h, target_w}, false);
}

}  // namespace mpa
