#pragma once

// Dense row-major tensors with reverse-mode autodiff. The scalar type is a
// template parameter: double for oracle tests, float for training. The op
// set is the minimal closure over the driving model and its losses:
// matmul, elementwise arithmetic, relu/tanh/log, softmax, layer_norm,
// shape ops (reshape/transpose/concat/slice), reductions, broadcast adds,
// and strided 2-D convolution.
//
// Each op returns a fresh tensor whose node records its parents and a
// closure that scatters the node's gradient back into them. backward()
// topologically sorts the recorded DAG and runs the closures in reverse,
// accumulating (+=) across fan-out.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "agd/types.hpp"

namespace agd {

// Tape recording is on by default; inference paths disable it with NoGrad.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGrad {
    bool prev;
    NoGrad() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGrad() { grad_mode() = prev; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative dimension");
        n *= size_t(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

template <typename T>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;  // empty until first touched
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

        size_t numel() const { return values.size(); }
        std::vector<T>& ensure_grad() {
            if (grad.empty()) grad.assign(values.size(), T(0));
            return grad;
        }
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }
    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->values.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor from(Shape shape, std::vector<T> vals, bool requires_grad = false) {
        if (shape_numel(shape) != vals.size())
            throw ShapeError("Tensor::from: " + shape_str(shape) + " does not hold " +
                             std::to_string(vals.size()) + " values");
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->values = std::move(vals);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }
    static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return int(node_->shape.size()); }
    int dim(int i) const { return node_->shape[size_t(i)]; }
    size_t size() const { return node_->values.size(); }

    std::span<T> values() { return node_->values; }
    std::span<const T> values() const { return node_->values; }
    std::span<const T> grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    T item() const {
        if (size() != 1) throw ShapeError("item(): tensor is not scalar");
        return node_->values[0];
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Reverse-mode sweep from a scalar output. Gradients accumulate across
    // fan-out; leaves keep their grad after the sweep.
    void backward() const {
        if (size() != 1) throw ShapeError("backward(): seed must be scalar");
        // Iterative post-order topological sort.
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->ensure_grad()[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backprop && !n->grad.empty()) n->backprop(*n);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<typename Tensor<T>::Node>;

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> vals, std::vector<Tensor<T>> parents,
                  std::function<void(typename Tensor<T>::Node&)> backprop) {
    auto n = std::make_shared<typename Tensor<T>::Node>();
    n->shape = std::move(shape);
    n->values = std::move(vals);
    bool needs = false;
    for (auto& p : parents) needs = needs || p.requires_grad();
    if (grad_mode() && needs) {
        n->requires_grad = true;
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor<T>(std::move(n));
}

inline std::vector<int> row_major_strides(const Shape& s) {
    std::vector<int> st(s.size(), 1);
    for (int i = int(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T, typename FwdOp, typename Bwd>
Tensor<T> binary_ew(const Tensor<T>& a, const Tensor<T>& b, FwdOp fwd, Bwd bwd, const char* name) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<T> out(a.size());
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    auto an = a.node(), bn = b.node();
    return detail::make_op<T>(
        a.shape(), std::move(out), {a, b}, [an, bn, bwd](typename Tensor<T>::Node& self) {
            auto& ga = an->ensure_grad();
            auto& gb = bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                bwd(self.grad[i], an->values[i], bn->values[i], self.values[i], ga[i], gb[i]);
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_ew(
        a, b, [](T x, T y) { return x + y; },
        [](T g, T, T, T, T& ga, T& gb) { ga += g; gb += g; }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_ew(
        a, b, [](T x, T y) { return x - y; },
        [](T g, T, T, T, T& ga, T& gb) { ga += g; gb -= g; }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_ew(
        a, b, [](T x, T y) { return x * y; },
        [](T g, T x, T y, T, T& ga, T& gb) { ga += g * y; gb += g * x; }, "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_ew(
        a, b, [](T x, T y) { return x / y; },
        [](T g, T x, T y, T, T& ga, T& gb) {
            ga += g / y;
            gb -= g * x / (y * y);
        },
        "div");
}

template <typename T, typename FwdOp, typename Bwd>
Tensor<T> unary_ew(const Tensor<T>& a, FwdOp fwd, Bwd bwd) {
    std::vector<T> out(a.size());
    auto av = a.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
    auto an = a.node();
    return detail::make_op<T>(a.shape(), std::move(out), {a},
                              [an, bwd](typename Tensor<T>::Node& self) {
                                  auto& ga = an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                      ga[i] += bwd(self.grad[i], an->values[i], self.values[i]);
                              });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return unary_ew(a, [s](T x) { return x + s; }, [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    return unary_ew(a, [s](T x) { return x * s; }, [s](T g, T, T) { return g * s; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_ew(a, [](T x) { return x > T(0) ? x : T(0); },
                    [](T g, T x, T) { return x > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> tanh_(const Tensor<T>& a) {
    return unary_ew(a, [](T x) { return std::tanh(x); },
                    [](T g, T, T y) { return g * (T(1) - y * y); });
}

template <typename T>
Tensor<T> log_(const Tensor<T>& a) {
    return unary_ew(a, [](T x) { return std::log(x); }, [](T g, T x, T) { return g / x; });
}

// |x| as relu(x) + relu(-x); subgradient 0 at the kink.
template <typename T>
Tensor<T> abs_(const Tensor<T>& a) {
    return add(relu(a), relu(mul_scalar(a, T(-1))));
}

// ---------------------------------------------------------------------------
// matmul

// a: (..., m, k), b: (k, n) or (..., k, n) with identical leading dims.
// Forward and both backward passes are Eigen GEMMs over batch slices.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands must have rank >= 2");
    const int m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
    const int kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
    if (k != kb)
        throw ShapeError("matmul: inner dims disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const bool b_shared = (b.rank() == 2 && a.rank() > 2);
    if (!b_shared && a.rank() != b.rank())
        throw ShapeError("matmul: rank mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    size_t batch = 1;
    Shape out_shape;
    for (int i = 0; i < a.rank() - 2; ++i) {
        if (!b_shared && b.dim(i) != a.dim(i)) throw ShapeError("matmul: batch dims disagree");
        batch *= size_t(a.dim(i));
        out_shape.push_back(a.dim(i));
    }
    out_shape.push_back(m);
    out_shape.push_back(n);

    std::vector<T> out(batch * size_t(m) * n);
    const T* ap = a.values().data();
    const T* bp = b.values().data();
    for (size_t s = 0; s < batch; ++s) {
        detail::ECMap<T> A(ap + s * size_t(m) * k, m, k);
        detail::ECMap<T> B(bp + (b_shared ? 0 : s * size_t(k) * n), k, n);
        detail::EMap<T> C(out.data() + s * size_t(m) * n, m, n);
        C.noalias() = A * B;
    }

    auto an = a.node(), bn = b.node();
    return detail::make_op<T>(
        std::move(out_shape), std::move(out), {a, b},
        [an, bn, batch, m, k, n, b_shared](typename Tensor<T>::Node& self) {
            auto& ga = an->ensure_grad();
            auto& gb = bn->ensure_grad();
            for (size_t s = 0; s < batch; ++s) {
                detail::ECMap<T> G(self.grad.data() + s * size_t(m) * n, m, n);
                detail::ECMap<T> A(an->values.data() + s * size_t(m) * k, m, k);
                detail::ECMap<T> B(bn->values.data() + (b_shared ? 0 : s * size_t(k) * n), k, n);
                detail::EMap<T> GA(ga.data() + s * size_t(m) * k, m, k);
                detail::EMap<T> GB(gb.data() + (b_shared ? 0 : s * size_t(k) * n), k, n);
                GA.noalias() += G * B.transpose();
                GB.noalias() += A.transpose() * G;
            }
        });
}

// ---------------------------------------------------------------------------
// softmax / layer_norm

// Numerically stabilized softmax along `axis` (negative counts from the end).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank()) throw ShapeError("softmax: axis out of range");
    const int n = x.dim(axis);
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= size_t(x.dim(i));
    for (int i = axis + 1; i < x.rank(); ++i) inner *= size_t(x.dim(i));

    std::vector<T> out(x.size());
    auto xv = x.values();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t j = 0; j < inner; ++j) {
            const size_t base = o * size_t(n) * inner + j;
            T mx = xv[base];
            for (int i = 1; i < n; ++i) mx = std::max(mx, xv[base + size_t(i) * inner]);
            T sum = T(0);
            for (int i = 0; i < n; ++i) {
                T e = std::exp(xv[base + size_t(i) * inner] - mx);
                out[base + size_t(i) * inner] = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (int i = 0; i < n; ++i) out[base + size_t(i) * inner] *= inv;
        }
    }
    auto xn = x.node();
    return detail::make_op<T>(
        x.shape(), std::move(out), {x}, [xn, n, outer, inner](typename Tensor<T>::Node& self) {
            auto& gx = xn->ensure_grad();
            for (size_t o = 0; o < outer; ++o) {
                for (size_t j = 0; j < inner; ++j) {
                    const size_t base = o * size_t(n) * inner + j;
                    T dot = T(0);
                    for (int i = 0; i < n; ++i) {
                        const size_t idx = base + size_t(i) * inner;
                        dot += self.grad[idx] * self.values[idx];
                    }
                    for (int i = 0; i < n; ++i) {
                        const size_t idx = base + size_t(i) * inner;
                        gx[idx] += self.values[idx] * (self.grad[idx] - dot);
                    }
                }
            }
        });
}

// Normalizes the last dimension to zero mean / unit variance (population
// variance, floored with 1e-5 so constant rows map to zero), then applies
// the learnable affine. gain/bias are length-d vectors.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
    const int d = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw ShapeError("layer_norm: gain/bias must match last dim " + std::to_string(d));
    const size_t rows = x.size() / size_t(d);
    const T eps = T(1e-5);

    std::vector<T> out(x.size());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    for (size_t r = 0; r < rows; ++r) {
        const size_t base = r * size_t(d);
        T mean = T(0);
        for (int i = 0; i < d; ++i) mean += xv[base + i];
        mean /= T(d);
        T var = T(0);
        for (int i = 0; i < d; ++i) {
            const T c = xv[base + i] - mean;
            var += c * c;
        }
        var /= T(d);
        const T istd = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        for (int i = 0; i < d; ++i) {
            const T xh = (xv[base + i] - mean) * istd;
            (*xhat)[base + i] = xh;
            out[base + i] = gv[i] * xh + bv[i];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return detail::make_op<T>(
        x.shape(), std::move(out), {x, gain, bias},
        [xn, gn, bn, xhat, inv_std, rows, d](typename Tensor<T>::Node& self) {
            auto& gx = xn->ensure_grad();
            auto& gg = gn->ensure_grad();
            auto& gb = bn->ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const size_t base = r * size_t(d);
                T mean_gy = T(0), mean_gyx = T(0);
                for (int i = 0; i < d; ++i) {
                    const T gy = self.grad[base + i] * gn->values[i];
                    mean_gy += gy;
                    mean_gyx += gy * (*xhat)[base + i];
                }
                mean_gy /= T(d);
                mean_gyx /= T(d);
                const T istd = (*inv_std)[r];
                for (int i = 0; i < d; ++i) {
                    const T gy = self.grad[base + i] * gn->values[i];
                    gx[base + i] += (gy - mean_gy - (*xhat)[base + i] * mean_gyx) * istd;
                    gg[i] += self.grad[base + i] * (*xhat)[base + i];
                    gb[i] += self.grad[base + i];
                }
            }
        });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.values()) s += v;
    auto xn = x.node();
    return detail::make_op<T>({1}, {s}, {x}, [xn](typename Tensor<T>::Node& self) {
        auto& gx = xn->ensure_grad();
        const T g = self.grad[0];
        for (auto& v : gx) v += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul_scalar(sum(x), T(1) / T(x.size()));
}

// Sum over one axis; the result drops that axis.
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank()) throw ShapeError("sum_axis: axis out of range");
    const int n = x.dim(axis);
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= size_t(x.dim(i));
    for (int i = axis + 1; i < x.rank(); ++i) inner *= size_t(x.dim(i));
    Shape out_shape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);

    std::vector<T> out(outer * inner, T(0));
    auto xv = x.values();
    for (size_t o = 0; o < outer; ++o)
        for (int i = 0; i < n; ++i)
            for (size_t j = 0; j < inner; ++j)
                out[o * inner + j] += xv[(o * size_t(n) + size_t(i)) * inner + j];

    auto xn = x.node();
    return detail::make_op<T>(std::move(out_shape), std::move(out), {x},
                              [xn, n, outer, inner](typename Tensor<T>::Node& self) {
                                  auto& gx = xn->ensure_grad();
                                  for (size_t o = 0; o < outer; ++o)
                                      for (int i = 0; i < n; ++i)
                                          for (size_t j = 0; j < inner; ++j)
                                              gx[(o * size_t(n) + size_t(i)) * inner + j] +=
                                                  self.grad[o * inner + j];
                              });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
    if (axis < 0) axis += x.rank();
    return mul_scalar(sum_axis(x, axis), T(1) / T(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    std::vector<T> out(x.values().begin(), x.values().end());
    auto xn = x.node();
    return detail::make_op<T>(std::move(new_shape), std::move(out), {x},
                              [xn](typename Tensor<T>::Node& self) {
                                  auto& gx = xn->ensure_grad();
                                  for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                              });
}

// General axis permutation: out[i0',i1',...] = x[iperm(0)...]. perm lists,
// for each output axis, the source axis it comes from.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::vector<int> perm) {
    if (int(perm.size()) != x.rank()) throw ShapeError("transpose: perm size mismatch");
    Shape out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.dim(perm[i]);
    const auto in_strides = detail::row_major_strides(x.shape());
    const auto out_strides = detail::row_major_strides(out_shape);
    const int r = x.rank();

    // map: for input linear index, compute output linear index
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = int(i);

    std::vector<T> out(x.size());
    auto xv = x.values();
    std::vector<int> idx(r, 0);
    for (size_t lin = 0; lin < x.size(); ++lin) {
        size_t out_lin = 0;
        for (int d = 0; d < r; ++d) out_lin += size_t(idx[d]) * out_strides[inv[d]];
        out[out_lin] = xv[lin];
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[d] < x.dim(d)) break;
            idx[d] = 0;
        }
    }
    auto xn = x.node();
    auto xshape = x.shape();
    return detail::make_op<T>(
        std::move(out_shape), std::move(out), {x},
        [xn, xshape, out_strides, inv, r](typename Tensor<T>::Node& self) {
            auto& gx = xn->ensure_grad();
            std::vector<int> idx(r, 0);
            for (size_t lin = 0; lin < gx.size(); ++lin) {
                size_t out_lin = 0;
                for (int d = 0; d < r; ++d) out_lin += size_t(idx[d]) * out_strides[inv[d]];
                gx[lin] += self.grad[out_lin];
                for (int d = r - 1; d >= 0; --d) {
                    if (++idx[d] < xshape[d]) break;
                    idx[d] = 0;
                }
            }
        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: empty input");
    if (axis < 0) axis += xs[0].rank();
    const int r = xs[0].rank();
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    Shape out_shape = xs[0].shape();
    int total = 0;
    for (auto& x : xs) {
        if (x.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis && x.dim(d) != out_shape[d]) throw ShapeError("concat: dim mismatch");
        total += x.dim(axis);
    }
    out_shape[axis] = total;

    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= size_t(out_shape[i]);
    for (int i = axis + 1; i < r; ++i) inner *= size_t(out_shape[i]);

    std::vector<T> out(shape_numel(out_shape));
    size_t off = 0;  // offset in axis units
    for (auto& x : xs) {
        const size_t nx = size_t(x.dim(axis)) * inner;
        auto xv = x.values();
        for (size_t o = 0; o < outer; ++o)
            std::copy_n(xv.data() + o * nx, nx, out.data() + (o * size_t(total) + off) * inner);
        off += size_t(x.dim(axis));
    }

    std::vector<detail::NodePtr<T>> nodes;
    std::vector<size_t> sizes;
    for (auto& x : xs) {
        nodes.push_back(x.node());
        sizes.push_back(size_t(x.dim(axis)));
    }
    return detail::make_op<T>(std::move(out_shape), std::move(out), xs,
                              [nodes, sizes, outer, inner, total](typename Tensor<T>::Node& self) {
                                  size_t off = 0;
                                  for (size_t t = 0; t < nodes.size(); ++t) {
                                      auto& gx = nodes[t]->ensure_grad();
                                      const size_t nx = sizes[t] * inner;
                                      for (size_t o = 0; o < outer; ++o) {
                                          const T* src =
                                              self.grad.data() + (o * size_t(total) + off) * inner;
                                          T* dst = gx.data() + o * nx;
                                          for (size_t i = 0; i < nx; ++i) dst[i] += src[i];
                                      }
                                      off += sizes[t];
                                  }
                              });
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> xs, int axis) {
    return concat(std::vector<Tensor<T>>(xs), axis);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank()) throw ShapeError("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > x.dim(axis)) throw ShapeError("slice: range");
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= size_t(x.dim(i));
    for (int i = axis + 1; i < x.rank(); ++i) inner *= size_t(x.dim(i));
    const size_t n = size_t(x.dim(axis));

    std::vector<T> out(outer * size_t(len) * inner);
    auto xv = x.values();
    for (size_t o = 0; o < outer; ++o)
        std::copy_n(xv.data() + (o * n + size_t(start)) * inner, size_t(len) * inner,
                    out.data() + o * size_t(len) * inner);
    auto xn = x.node();
    return detail::make_op<T>(std::move(out_shape), std::move(out), {x},
                              [xn, outer, inner, n, start, len](typename Tensor<T>::Node& self) {
                                  auto& gx = xn->ensure_grad();
                                  for (size_t o = 0; o < outer; ++o) {
                                      const T* src = self.grad.data() + o * size_t(len) * inner;
                                      T* dst = gx.data() + (o * n + size_t(start)) * inner;
                                      for (size_t i = 0; i < size_t(len) * inner; ++i)
                                          dst[i] += src[i];
                                  }
                              });
}

// ---------------------------------------------------------------------------
// broadcast adds (the only broadcasting the model needs)

// b's shape must be a suffix of x's shape; b is added to every leading slice.
// Covers linear-layer biases (c,) and the positional embedding (N,c).
template <typename T>
Tensor<T> add_bcast(const Tensor<T>& x, const Tensor<T>& b) {
    if (b.rank() > x.rank()) throw ShapeError("add_bcast: rhs rank too large");
    for (int i = 0; i < b.rank(); ++i)
        if (b.dim(b.rank() - 1 - i) != x.dim(x.rank() - 1 - i))
            throw ShapeError("add_bcast: " + shape_str(b.shape()) + " is not a suffix of " +
                             shape_str(x.shape()));
    const size_t bs = b.size();
    const size_t reps = x.size() / bs;
    std::vector<T> out(x.size());
    auto xv = x.values();
    auto bv = b.values();
    for (size_t r = 0; r < reps; ++r)
        for (size_t i = 0; i < bs; ++i) out[r * bs + i] = xv[r * bs + i] + bv[i];
    auto xn = x.node(), bn = b.node();
    return detail::make_op<T>(x.shape(), std::move(out), {x, b},
                              [xn, bn, reps, bs](typename Tensor<T>::Node& self) {
                                  auto& gx = xn->ensure_grad();
                                  auto& gb = bn->ensure_grad();
                                  for (size_t r = 0; r < reps; ++r)
                                      for (size_t i = 0; i < bs; ++i) {
                                          gx[r * bs + i] += self.grad[r * bs + i];
                                          gb[i] += self.grad[r * bs + i];
                                      }
                              });
}

// v has x's shape with dimension `axis` removed; it is broadcast along that
// axis. Covers adding per-sample speed/command vectors (B,c) to (B,N,c).
template <typename T>
Tensor<T> add_bcast_axis(const Tensor<T>& x, const Tensor<T>& v, int axis) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank()) throw ShapeError("add_bcast_axis: axis out of range");
    Shape want;
    for (int i = 0; i < x.rank(); ++i)
        if (i != axis) want.push_back(x.dim(i));
    if (v.shape() != want)
        throw ShapeError("add_bcast_axis: rhs shape " + shape_str(v.shape()) + " != " +
                         shape_str(want));
    const int n = x.dim(axis);
    size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= size_t(x.dim(i));
    for (int i = axis + 1; i < x.rank(); ++i) inner *= size_t(x.dim(i));

    std::vector<T> out(x.size());
    auto xv = x.values();
    auto vv = v.values();
    for (size_t o = 0; o < outer; ++o)
        for (int i = 0; i < n; ++i)
            for (size_t j = 0; j < inner; ++j) {
                const size_t xi = (o * size_t(n) + size_t(i)) * inner + j;
                out[xi] = xv[xi] + vv[o * inner + j];
            }
    auto xn = x.node(), vn = v.node();
    return detail::make_op<T>(x.shape(), std::move(out), {x, v},
                              [xn, vn, n, outer, inner](typename Tensor<T>::Node& self) {
                                  auto& gx = xn->ensure_grad();
                                  auto& gv = vn->ensure_grad();
                                  for (size_t o = 0; o < outer; ++o)
                                      for (int i = 0; i < n; ++i)
                                          for (size_t j = 0; j < inner; ++j) {
                                              const size_t xi =
                                                  (o * size_t(n) + size_t(i)) * inner + j;
                                              gx[xi] += self.grad[xi];
                                              gv[o * inner + j] += self.grad[xi];
                                          }
                              });
}

// ---------------------------------------------------------------------------
// conv2d

namespace detail {

// im2col for one image (Cin,H,W) -> (Cin*kh*kw, Ho*Wo)
template <typename T>
void im2col(const T* img, int cin, int h, int w, int kh, int kw, int stride, int pad, int ho,
            int wo, T* cols) {
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* row = cols + ((size_t(c) * kh + ky) * kw + kx) * size_t(ho) * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        row[size_t(oy) * wo + ox] =
                            (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                ? img[(size_t(c) * h + iy) * w + ix]
                                : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_accum(const T* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                  int ho, int wo, T* img) {
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* row = cols + ((size_t(c) * kh + ky) * kw + kx) * size_t(ho) * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= w) continue;
                        img[(size_t(c) * h + iy) * w + ix] += row[size_t(oy) * wo + ox];
                    }
                }
            }
}

}  // namespace detail

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// x: (B,Cin,H,W), w: (Cout,Cin,kh,kw), bias: (Cout). im2col + GEMM; the
// column buffers are recomputed in the backward pass rather than saved.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad) {
    if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d: x must be 4-D, w must be 4-D");
    const int B = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin) throw ShapeError("conv2d: channel mismatch");
    if (bias.rank() != 1 || bias.dim(0) != cout) throw ShapeError("conv2d: bias shape");
    const int ho = conv_out_dim(h, kh, stride, pad), wo = conv_out_dim(wd, kw, stride, pad);
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");
    const int ckk = cin * kh * kw;
    const size_t plane = size_t(ho) * wo;

    std::vector<T> out(size_t(B) * cout * plane);
    std::vector<T> cols(size_t(ckk) * plane);
    const T* xp = x.values().data();
    const T* wp = w.values().data();
    const T* bp = bias.values().data();
    for (int b = 0; b < B; ++b) {
        detail::im2col(xp + size_t(b) * cin * h * wd, cin, h, wd, kh, kw, stride, pad, ho, wo,
                       cols.data());
        detail::ECMap<T> W(wp, cout, ckk);
        detail::ECMap<T> C(cols.data(), ckk, int(plane));
        detail::EMap<T> O(out.data() + size_t(b) * cout * plane, cout, int(plane));
        O.noalias() = W * C;
        for (int co = 0; co < cout; ++co) {
            T* row = out.data() + (size_t(b) * cout + co) * plane;
            for (size_t i = 0; i < plane; ++i) row[i] += bp[co];
        }
    }

    auto xn = x.node(), wn = w.node(), bn = bias.node();
    return detail::make_op<T>(
        {B, cout, ho, wo}, std::move(out), {x, w, bias},
        [xn, wn, bn, B, cin, h, wd, cout, kh, kw, stride, pad, ho, wo, ckk,
         plane](typename Tensor<T>::Node& self) {
            auto& gx = xn->ensure_grad();
            auto& gw = wn->ensure_grad();
            auto& gb = bn->ensure_grad();
            std::vector<T> cols(size_t(ckk) * plane);
            std::vector<T> dcols(size_t(ckk) * plane);
            for (int b = 0; b < B; ++b) {
                const T* g = self.grad.data() + size_t(b) * cout * plane;
                detail::ECMap<T> G(g, cout, int(plane));
                // bias grad
                for (int co = 0; co < cout; ++co) {
                    T s = T(0);
                    const T* row = g + size_t(co) * plane;
                    for (size_t i = 0; i < plane; ++i) s += row[i];
                    gb[co] += s;
                }
                // weight grad: G * colsᵀ
                detail::im2col(xn->values.data() + size_t(b) * cin * h * wd, cin, h, wd, kh, kw,
                               stride, pad, ho, wo, cols.data());
                detail::ECMap<T> C(cols.data(), ckk, int(plane));
                detail::EMap<T> GW(gw.data(), cout, ckk);
                GW.noalias() += G * C.transpose();
                // input grad: Wᵀ * G scattered back
                detail::ECMap<T> W(wn->values.data(), cout, ckk);
                detail::EMap<T> DC(dcols.data(), ckk, int(plane));
                DC.noalias() = W.transpose() * G;
                detail::col2im_accum(dcols.data(), cin, h, wd, kh, kw, stride, pad, ho, wo,
                                     gx.data() + size_t(b) * cin * h * wd);
            }
        });
}

// Affine map on the last dimension: x (...,in) * w (in,out) + b (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_bcast(matmul(x, w), b);
}

}  // namespace agd
