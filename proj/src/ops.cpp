// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0

#include "neuroalign/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "neuroalign/error.hpp"

namespace neuroalign {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;
template <typename T>
using Backward = std::function<void(detail::Node<T>&)>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::vector<NodePtr<T>> inputs,
                           Backward<T> backward) {
    for (const T& v : value) {
        if (!std::isfinite(v)) {
            throw NumericalError(std::string(op) + ": produced a non-finite value");
        }
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    const bool any = grad_enabled() && std::any_of(inputs.begin(), inputs.end(), [](const auto& in) { return in->requires_grad; });
    if (any) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
    }
    return BasicTensor<T>::from_node(std::move(node));
}

// Gradient buffer of an input, or nullptr when it does not participate.
template <typename T>
T* grad_of(detail::Node<T>& out, std::size_t i) {
    auto& in = *out.inputs[i];
    return in.requires_grad ? in.grad_buffer() : nullptr;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
}

template <typename T>
std::size_t last_dim(const BasicTensor<T>& x, const char* op) {
    if (x.rank() == 0) {
        throw ShapeError(std::string(op) + ": rank-0 tensor");
    }
    return x.shape().back();
}

} // namespace

double gelu_value(double x) {
    constexpr double k = 0.7978845608028654; // sqrt(2 / pi)
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

double silu_value(double x) { return x / (1.0 + std::exp(-x)); }

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    auto av = a.values();
    auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return make_result<T>("add", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](detail::Node<T>& o) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (T* g = grad_of(o, k)) {
                for (std::size_t i = 0; i < o.grad.size(); ++i) {
                    g[i] += o.grad[i];
                }
            }
        }
    });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    auto av = a.values();
    auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] - bv[i];
    }
    return make_result<T>("sub", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](detail::Node<T>& o) {
        if (T* g = grad_of(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                g[i] += o.grad[i];
            }
        }
        if (T* g = grad_of(o, 1)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                g[i] -= o.grad[i];
            }
        }
    });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    auto av = a.values();
    auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return make_result<T>("mul", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](detail::Node<T>& o) {
        const auto& av = o.inputs[0]->value;
        const auto& bv = o.inputs[1]->value;
        if (T* g = grad_of(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                g[i] += o.grad[i] * bv[i];
            }
        }
        if (T* g = grad_of(o, 1)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                g[i] += o.grad[i] * av[i];
            }
        }
    });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
    auto av = a.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * factor;
    }
    return make_result<T>("scale", a.shape(), std::move(out), {a.node_ptr()}, [factor](detail::Node<T>& o) {
        T* g = grad_of(o, 0);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            g[i] += o.grad[i] * factor;
        }
    });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T offset) {
    auto av = a.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + offset;
    }
    return make_result<T>("add_scalar", a.shape(), std::move(out), {a.node_ptr()}, [](detail::Node<T>& o) {
        T* g = grad_of(o, 0);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            g[i] += o.grad[i];
        }
    });
}

template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias) {
    const std::size_t n = last_dim(a, "add_bias");
    if (bias.rank() != 1 || bias.dim(0) != n) {
        throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(a.shape()));
    }
    auto av = a.values();
    auto bv = bias.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + bv[i % n];
    }
    return make_result<T>("add_bias", a.shape(), std::move(out), {a.node_ptr(), bias.node_ptr()},
                          [n](detail::Node<T>& o) {
                              if (T* g = grad_of(o, 0)) {
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                      g[i] += o.grad[i];
                                  }
                              }
                              if (T* g = grad_of(o, 1)) {
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                      g[i % n] += o.grad[i];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    }
    const std::size_t k = b.dim(0);
    const std::size_t n = b.dim(1);
    const std::size_t m = a.numel() / k;
    Shape shape = a.shape();
    shape.back() = n;
    std::vector<T> out(m * n);
    MatMap<T>(out.data(), m, n).noalias() = ConstMatMap<T>(a.values().data(), m, k) *
                                            ConstMatMap<T>(b.values().data(), k, n);
    return make_result<T>("matmul", std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                          [m, k, n](detail::Node<T>& o) {
                              ConstMatMap<T> dc(o.grad.data(), m, n);
                              if (T* g = grad_of(o, 0)) {
                                  MatMap<T>(g, m, k).noalias() +=
                                      dc * ConstMatMap<T>(o.inputs[1]->value.data(), k, n).transpose();
                              }
                              if (T* g = grad_of(o, 1)) {
                                  MatMap<T>(g, k, n).noalias() +=
                                      ConstMatMap<T>(o.inputs[0]->value.data(), m, k).transpose() * dc;
                              }
                          });
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw ShapeError("bmm: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    const std::size_t batch = a.dim(0);
    const std::size_t m = a.dim(1);
    const std::size_t k = a.dim(2);
    const std::size_t n = b.dim(2);
    std::vector<T> out(batch * m * n);
    const T* ap = a.values().data();
    const T* bp = b.values().data();
    for (std::size_t i = 0; i < batch; ++i) {
        MatMap<T>(out.data() + i * m * n, m, n).noalias() =
            ConstMatMap<T>(ap + i * m * k, m, k) * ConstMatMap<T>(bp + i * k * n, k, n);
    }
    return make_result<T>("bmm", Shape{batch, m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                          [batch, m, k, n](detail::Node<T>& o) {
                              T* ga = grad_of(o, 0);
                              T* gb = grad_of(o, 1);
                              const T* av = o.inputs[0]->value.data();
                              const T* bv = o.inputs[1]->value.data();
                              for (std::size_t i = 0; i < batch; ++i) {
                                  ConstMatMap<T> dc(o.grad.data() + i * m * n, m, n);
                                  if (ga) {
                                      MatMap<T>(ga + i * m * k, m, k).noalias() +=
                                          dc * ConstMatMap<T>(bv + i * k * n, k, n).transpose();
                                  }
                                  if (gb) {
                                      MatMap<T>(gb + i * k * n, k, n).noalias() +=
                                          ConstMatMap<T>(av + i * m * k, m, k).transpose() * dc;
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
    }
    std::vector<T> out(a.values().begin(), a.values().end());
    return make_result<T>("reshape", std::move(shape), std::move(out), {a.node_ptr()}, [](detail::Node<T>& o) {
        T* g = grad_of(o, 0);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            g[i] += o.grad[i];
        }
    });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<std::size_t>& perm) {
    const std::size_t r = a.rank();
    if (perm.size() != r) {
        throw ShapeError("permute: permutation rank mismatch for " + shape_string(a.shape()));
    }
    std::vector<bool> used(r, false);
    for (auto p : perm) {
        if (p >= r || used[p]) {
            throw ShapeError("permute: invalid permutation");
        }
        used[p] = true;
    }
    const Shape& in_shape = a.shape();
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) {
        in_stride[i - 1] = in_stride[i] * in_shape[i];
    }
    Shape out_shape(r);
    std::vector<std::size_t> src_stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[perm[i]];
        src_stride[i] = in_stride[perm[i]];
    }
    // Source offset of every output element, reused by backward.
    auto index = std::make_shared<std::vector<std::size_t>>(a.numel());
    std::vector<std::size_t> counter(r, 0);
    std::size_t offset = 0;
    for (std::size_t flat = 0; flat < index->size(); ++flat) {
        (*index)[flat] = offset;
        for (std::size_t ax = r; ax-- > 0;) {
            if (++counter[ax] < out_shape[ax]) {
                offset += src_stride[ax];
                break;
            }
            offset -= src_stride[ax] * (out_shape[ax] - 1);
            counter[ax] = 0;
        }
    }
    auto av = a.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[(*index)[i]];
    }
    return make_result<T>("permute", std::move(out_shape), std::move(out), {a.node_ptr()},
                          [index](detail::Node<T>& o) {
                              T* g = grad_of(o, 0);
                              for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                  g[(*index)[i]] += o.grad[i];
                              }
                          });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    if (a.rank() < 2) {
        throw ShapeError("transpose: need rank >= 2");
    }
    std::vector<std::size_t> perm(a.rank());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
    return permute(a, perm);
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
    const std::size_t n = last_dim(x, "softmax_rows");
    const std::size_t rows = x.numel() / n;
    auto xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.data() + r * n;
        T* y = out.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp(in[j] - mx);
            total += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            y[j] /= total;
        }
    }
    return make_result<T>("softmax_rows", x.shape(), std::move(out), {x.node_ptr()},
                          [n, rows](detail::Node<T>& o) {
                              T* g = grad_of(o, 0);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* y = o.value.data() + r * n;
                                  const T* dy = o.grad.data() + r * n;
                                  T dot = 0;
                                  for (std::size_t j = 0; j < n; ++j) {
                                      dot += dy[j] * y[j];
                                  }
                                  for (std::size_t j = 0; j < n; ++j) {
                                      g[r * n + j] += y[j] * (dy[j] - dot);
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> log_softmax_rows(const BasicTensor<T>& x, std::span<const std::uint8_t> keep) {
    const std::size_t n = last_dim(x, "log_softmax_rows");
    const std::size_t rows = x.numel() / n;
    if (!keep.empty() && keep.size() != x.numel()) {
        throw ShapeError("log_softmax_rows: keep mask length does not match input");
    }
    auto mask = std::make_shared<std::vector<std::uint8_t>>(keep.begin(), keep.end());
    if (mask->empty()) {
        mask->assign(x.numel(), 1);
    }
    auto xv = x.values();
    std::vector<T> out(xv.size(), T(0));
    // Softmax probabilities are kept for the backward pass.
    auto prob = std::make_shared<std::vector<T>>(xv.size(), T(0));
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.data() + r * n;
        const std::uint8_t* k = mask->data() + r * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (k[j]) {
                mx = std::max(mx, in[j]);
            }
        }
        if (!std::isfinite(mx)) {
            throw ContractError("log_softmax_rows: a row keeps no entries");
        }
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (k[j]) {
                total += std::exp(in[j] - mx);
            }
        }
        const T log_total = std::log(total);
        for (std::size_t j = 0; j < n; ++j) {
            if (k[j]) {
                out[r * n + j] = in[j] - mx - log_total;
                (*prob)[r * n + j] = std::exp(out[r * n + j]);
            }
        }
    }
    return make_result<T>("log_softmax_rows", x.shape(), std::move(out), {x.node_ptr()},
                          [n, rows, mask, prob](detail::Node<T>& o) {
                              T* g = grad_of(o, 0);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* dy = o.grad.data() + r * n;
                                  const std::uint8_t* k = mask->data() + r * n;
                                  T total = 0;
                                  for (std::size_t j = 0; j < n; ++j) {
                                      if (k[j]) {
                                          total += dy[j];
                                      }
                                  }
                                  for (std::size_t j = 0; j < n; ++j) {
                                      if (k[j]) {
                                          g[r * n + j] += dy[j] - (*prob)[r * n + j] * total;
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias, T eps) {
    const std::size_t d = last_dim(x, "layer_norm");
    if (d < 2) {
        throw ShapeError("layer_norm: normalised axis must have at least 2 elements");
    }
    if (!(eps > T(0))) {
        throw ContractError("layer_norm: eps must be positive");
    }
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
    }
    const std::size_t rows = x.numel() / d;
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    auto xhat = std::make_shared<std::vector<T>>(xv.size());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.data() + r * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += in[j];
        }
        mean /= T(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (in[j] - mean) * (in[j] - mean);
        }
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (in[j] - mean) * rs;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = gv[j] * h + bv[j];
        }
    }
    return make_result<T>(
        "layer_norm", x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
        [d, rows, xhat, inv_std](detail::Node<T>& o) {
            T* gx = grad_of(o, 0);
            T* gg = grad_of(o, 1);
            T* gb = grad_of(o, 2);
            const auto& gv = o.inputs[1]->value;
            std::vector<T> dh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* dy = o.grad.data() + r * d;
                const T* h = xhat->data() + r * d;
                if (gg || gb) {
                    for (std::size_t j = 0; j < d; ++j) {
                        if (gg) {
                            gg[j] += dy[j] * h[j];
                        }
                        if (gb) {
                            gb[j] += dy[j];
                        }
                    }
                }
                if (gx) {
                    T sum_dh = 0;
                    T sum_dh_h = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dh[j] = dy[j] * gv[j];
                        sum_dh += dh[j];
                        sum_dh_h += dh[j] * h[j];
                    }
                    const T rs = (*inv_std)[r];
                    for (std::size_t j = 0; j < d; ++j) {
                        gx[r * d + j] += rs / T(d) * (T(d) * dh[j] - sum_dh - h[j] * sum_dh_h);
                    }
                }
            }
        });
}

template <typename T>
BasicTensor<T> activate(const BasicTensor<T>& x, Activation kind) {
    if (kind == Activation::identity) {
        return x;
    }
    auto xv = x.values();
    std::vector<T> out(xv.size());
    constexpr T k = T(0.7978845608028654);
    constexpr T c = T(0.044715);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = xv[i];
        switch (kind) {
        case Activation::gelu:
            out[i] = T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v)));
            break;
        case Activation::silu:
            out[i] = v / (T(1) + std::exp(-v));
            break;
        case Activation::relu:
            out[i] = v > T(0) ? v : T(0);
            break;
        case Activation::identity:
            break;
        }
    }
    const char* name = kind == Activation::gelu ? "gelu" : kind == Activation::silu ? "silu" : "relu";
    return make_result<T>(name, x.shape(), std::move(out), {x.node_ptr()}, [kind](detail::Node<T>& o) {
        T* g = grad_of(o, 0);
        const auto& xv = o.inputs[0]->value;
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const T v = xv[i];
            T d = 0;
            switch (kind) {
            case Activation::gelu: {
                const T t = std::tanh(k * (v + c * v * v * v));
                d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * c * v * v);
                break;
            }
            case Activation::silu: {
                const T s = T(1) / (T(1) + std::exp(-v));
                d = s * (T(1) + v * (T(1) - s));
                break;
            }
            case Activation::relu:
                d = v > T(0) ? T(1) : T(0);
                break;
            case Activation::identity:
                d = 1;
                break;
            }
            g[i] += o.grad[i] * d;
        }
    });
}

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
    T total = 0;
    for (T v : x.values()) {
        total += v;
    }
    return make_result<T>("sum_all", Shape{1}, std::vector<T>{total}, {x.node_ptr()}, [](detail::Node<T>& o) {
        T* g = grad_of(o, 0);
        const std::size_t n = o.inputs[0]->value.size();
        for (std::size_t i = 0; i < n; ++i) {
            g[i] += o.grad[0];
        }
    });
}

template <typename T>
BasicTensor<T> mean_all(const BasicTensor<T>& x) {
    return scale(sum_all(x), T(1) / T(x.numel()));
}

template <typename T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::size_t axis) {
    const Shape& s = x.shape();
    if (axis >= s.size()) {
        throw ShapeError("mean_axis: axis out of range for " + shape_string(s));
    }
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s[i];
    }
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        inner *= s[i];
    }
    const std::size_t len = s[axis];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) {
            out_shape.push_back(s[i]);
        }
    }
    if (out_shape.empty()) {
        out_shape.push_back(1);
    }
    auto xv = x.values();
    std::vector<T> out(outer * inner, T(0));
    const T inv = T(1) / T(len);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
            const T* row = xv.data() + (o * len + l) * inner;
            T* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                dst[i] += row[i];
            }
        }
    }
    for (auto& v : out) {
        v *= inv;
    }
    return make_result<T>("mean_axis", std::move(out_shape), std::move(out), {x.node_ptr()},
                          [outer, inner, len, inv](detail::Node<T>& o) {
                              T* g = grad_of(o, 0);
                              for (std::size_t a = 0; a < outer; ++a) {
                                  for (std::size_t l = 0; l < len; ++l) {
                                      T* dst = g + (a * len + l) * inner;
                                      const T* src = o.grad.data() + a * inner;
                                      for (std::size_t i = 0; i < inner; ++i) {
                                          dst[i] += src[i] * inv;
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> concat_last(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_last: no inputs");
    }
    Shape lead = parts[0].shape();
    lead.pop_back();
    const std::size_t rows = shape_numel(lead);
    auto widths = std::make_shared<std::vector<std::size_t>>();
    std::size_t total = 0;
    std::vector<NodePtr<T>> inputs;
    for (const auto& p : parts) {
        Shape pl = p.shape();
        const std::size_t w = pl.back();
        pl.pop_back();
        if (pl != lead) {
            throw ShapeError("concat_last: leading dimensions differ");
        }
        widths->push_back(w);
        total += w;
        inputs.push_back(p.node_ptr());
    }
    std::vector<T> out(rows * total);
    std::size_t col = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto pv = parts[k].values();
        const std::size_t w = (*widths)[k];
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(pv.data() + r * w, w, out.data() + r * total + col);
        }
        col += w;
    }
    Shape shape = lead;
    shape.push_back(total);
    return make_result<T>("concat_last", std::move(shape), std::move(out), std::move(inputs),
                          [rows, total, widths](detail::Node<T>& o) {
                              std::size_t col = 0;
                              for (std::size_t k = 0; k < widths->size(); ++k) {
                                  const std::size_t w = (*widths)[k];
                                  if (T* g = grad_of(o, k)) {
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          for (std::size_t j = 0; j < w; ++j) {
                                              g[r * w + j] += o.grad[r * total + col + j];
                                          }
                                      }
                                  }
                                  col += w;
                              }
                          });
}

template <typename T>
BasicTensor<T> stack(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw ShapeError("stack: no inputs");
    }
    const Shape& s = parts[0].shape();
    if (axis > s.size()) {
        throw ShapeError("stack: axis out of range");
    }
    std::vector<NodePtr<T>> inputs;
    for (const auto& p : parts) {
        require_same_shape(p.shape(), s, "stack");
        inputs.push_back(p.node_ptr());
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s[i];
    }
    const std::size_t inner = shape_numel(s) / outer;
    const std::size_t count = parts.size();
    std::vector<T> out(outer * count * inner);
    for (std::size_t k = 0; k < count; ++k) {
        auto pv = parts[k].values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.data() + o * inner, inner, out.data() + (o * count + k) * inner);
        }
    }
    Shape shape = s;
    shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
    return make_result<T>("stack", std::move(shape), std::move(out), std::move(inputs),
                          [outer, inner, count](detail::Node<T>& o) {
                              for (std::size_t k = 0; k < count; ++k) {
                                  if (T* g = grad_of(o, k)) {
                                      for (std::size_t a = 0; a < outer; ++a) {
                                          const T* src = o.grad.data() + (a * count + k) * inner;
                                          for (std::size_t i = 0; i < inner; ++i) {
                                              g[a * inner + i] += src[i];
                                          }
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> zero_slot(const BasicTensor<T>& x, std::size_t axis, std::size_t index) {
    const Shape& s = x.shape();
    if (axis >= s.size() || index >= s[axis]) {
        throw ShapeError("zero_slot: slot out of range for " + shape_string(s));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= s[i];
    }
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        inner *= s[i];
    }
    const std::size_t len = s[axis];
    auto xv = x.values();
    std::vector<T> out(xv.begin(), xv.end());
    for (std::size_t o = 0; o < outer; ++o) {
        std::fill_n(out.data() + (o * len + index) * inner, inner, T(0));
    }
    return make_result<T>("zero_slot", s, std::move(out), {x.node_ptr()},
                          [outer, inner, len, index](detail::Node<T>& o) {
                              T* g = grad_of(o, 0);
                              for (std::size_t a = 0; a < outer; ++a) {
                                  for (std::size_t l = 0; l < len; ++l) {
                                      if (l == index) {
                                          continue;
                                      }
                                      const std::size_t base = (a * len + l) * inner;
                                      for (std::size_t i = 0; i < inner; ++i) {
                                          g[base + i] += o.grad[base + i];
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x, T eps) {
    const std::size_t d = last_dim(x, "l2_normalize_rows");
    const std::size_t rows = x.numel() / d;
    auto xv = x.values();
    auto norms = std::make_shared<std::vector<T>>(rows);
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        T ss = 0;
        for (std::size_t j = 0; j < d; ++j) {
            ss += xv[r * d + j] * xv[r * d + j];
        }
        const T norm = std::max(std::sqrt(ss), eps);
        (*norms)[r] = norm;
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = xv[r * d + j] / norm;
        }
    }
    return make_result<T>("l2_normalize_rows", x.shape(), std::move(out), {x.node_ptr()},
                          [d, rows, norms, eps](detail::Node<T>& o) {
                              T* g = grad_of(o, 0);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* y = o.value.data() + r * d;
                                  const T* dy = o.grad.data() + r * d;
                                  const T norm = (*norms)[r];
                                  // Below the floor the map is x / eps, which is linear.
                                  T dot = 0;
                                  if (norm > eps) {
                                      for (std::size_t j = 0; j < d; ++j) {
                                          dot += y[j] * dy[j];
                                      }
                                  }
                                  for (std::size_t j = 0; j < d; ++j) {
                                      g[r * d + j] += (dy[j] - y[j] * dot) / norm;
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> row_dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "row_dot");
    const std::size_t d = last_dim(a, "row_dot");
    const std::size_t rows = a.numel() / d;
    Shape shape = a.shape();
    shape.pop_back();
    if (shape.empty()) {
        shape.push_back(1);
    }
    auto av = a.values();
    auto bv = b.values();
    std::vector<T> out(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            out[r] += av[r * d + j] * bv[r * d + j];
        }
    }
    return make_result<T>("row_dot", std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                          [d, rows](detail::Node<T>& o) {
                              const auto& av = o.inputs[0]->value;
                              const auto& bv = o.inputs[1]->value;
                              T* ga = grad_of(o, 0);
                              T* gb = grad_of(o, 1);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t j = 0; j < d; ++j) {
                                      if (ga) {
                                          ga[r * d + j] += o.grad[r] * bv[r * d + j];
                                      }
                                      if (gb) {
                                          gb[r * d + j] += o.grad[r] * av[r * d + j];
                                      }
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> row_sq_norm(const BasicTensor<T>& a) {
    const std::size_t d = last_dim(a, "row_sq_norm");
    const std::size_t rows = a.numel() / d;
    Shape shape = a.shape();
    shape.pop_back();
    if (shape.empty()) {
        shape.push_back(1);
    }
    auto av = a.values();
    std::vector<T> out(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            out[r] += av[r * d + j] * av[r * d + j];
        }
    }
    return make_result<T>("row_sq_norm", std::move(shape), std::move(out), {a.node_ptr()},
                          [d, rows](detail::Node<T>& o) {
                              const auto& av = o.inputs[0]->value;
                              T* g = grad_of(o, 0);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t j = 0; j < d; ++j) {
                                      g[r * d + j] += T(2) * o.grad[r] * av[r * d + j];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> diagonal(const BasicTensor<T>& x) {
    if (x.rank() != 2 || x.dim(0) != x.dim(1)) {
        throw ShapeError("diagonal: need a square matrix, got " + shape_string(x.shape()));
    }
    const std::size_t n = x.dim(0);
    auto xv = x.values();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = xv[i * n + i];
    }
    return make_result<T>("diagonal", Shape{n}, std::move(out), {x.node_ptr()}, [n](detail::Node<T>& o) {
        T* g = grad_of(o, 0);
        for (std::size_t i = 0; i < n; ++i) {
            g[i * n + i] += o.grad[i];
        }
    });
}

template <typename T>
BasicTensor<T> causal_depthwise_conv1d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                       const BasicTensor<T>& bias) {
    if (x.rank() != 3 || weight.rank() != 2 || weight.dim(0) != x.dim(1) || bias.shape() != Shape{x.dim(1)}) {
        throw ShapeError("causal_depthwise_conv1d: expected x[B,C,T], weight[C,k], bias[C]; got " +
                         shape_string(x.shape()) + ", " + shape_string(weight.shape()) + ", " +
                         shape_string(bias.shape()));
    }
    const std::size_t batch = x.dim(0);
    const std::size_t chans = x.dim(1);
    const std::size_t steps = x.dim(2);
    const std::size_t width = weight.dim(1);
    auto xv = x.values();
    auto wv = weight.values();
    auto bv = bias.values();
    std::vector<T> out(xv.size());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < chans; ++c) {
            const T* in = xv.data() + (b * chans + c) * steps;
            T* y = out.data() + (b * chans + c) * steps;
            const T* w = wv.data() + c * width;
            for (std::size_t t = 0; t < steps; ++t) {
                T acc = bv[c];
                const std::size_t span = std::min(width, t + 1);
                for (std::size_t j = 0; j < span; ++j) {
                    acc += w[j] * in[t - j];
                }
                y[t] = acc;
            }
        }
    }
    return make_result<T>(
        "causal_depthwise_conv1d", x.shape(), std::move(out), {x.node_ptr(), weight.node_ptr(), bias.node_ptr()},
        [batch, chans, steps, width](detail::Node<T>& o) {
            T* gx = grad_of(o, 0);
            T* gw = grad_of(o, 1);
            T* gb = grad_of(o, 2);
            const auto& xv = o.inputs[0]->value;
            const auto& wv = o.inputs[1]->value;
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < chans; ++c) {
                    const std::size_t base = (b * chans + c) * steps;
                    const T* dy = o.grad.data() + base;
                    for (std::size_t t = 0; t < steps; ++t) {
                        if (gb) {
                            gb[c] += dy[t];
                        }
                        const std::size_t span = std::min(width, t + 1);
                        for (std::size_t j = 0; j < span; ++j) {
                            if (gx) {
                                gx[base + t - j] += wv[c * width + j] * dy[t];
                            }
                            if (gw) {
                                gw[c * width + j] += xv[base + t - j] * dy[t];
                            }
                        }
                    }
                }
            }
        });
}

#define NEUROALIGN_INSTANTIATE_OPS(T)                                                                     \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                            \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                            \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                            \
    template BasicTensor<T> scale(const BasicTensor<T>&, T);                                              \
    template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                         \
    template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                         \
    template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&);                            \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                        \
    template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);              \
    template BasicTensor<T> transpose(const BasicTensor<T>&);                                             \
    template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                                          \
    template BasicTensor<T> log_softmax_rows(const BasicTensor<T>&, std::span<const std::uint8_t>);       \
    template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
    template BasicTensor<T> activate(const BasicTensor<T>&, Activation);                                  \
    template BasicTensor<T> sum_all(const BasicTensor<T>&);                                               \
    template BasicTensor<T> mean_all(const BasicTensor<T>&);                                              \
    template BasicTensor<T> mean_axis(const BasicTensor<T>&, std::size_t);                                \
    template BasicTensor<T> concat_last(const std::vector<BasicTensor<T>>&);                              \
    template BasicTensor<T> stack(const std::vector<BasicTensor<T>>&, std::size_t);                       \
    template BasicTensor<T> zero_slot(const BasicTensor<T>&, std::size_t, std::size_t);                   \
    template BasicTensor<T> l2_normalize_rows(const BasicTensor<T>&, T);                                  \
    template BasicTensor<T> row_dot(const BasicTensor<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> row_sq_norm(const BasicTensor<T>&);                                           \
    template BasicTensor<T> diagonal(const BasicTensor<T>&);                                              \
    template BasicTensor<T> causal_depthwise_conv1d(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                                    const BasicTensor<T>&);

NEUROALIGN_INSTANTIATE_OPS(float)
NEUROALIGN_INSTANTIATE_OPS(double)

#undef NEUROALIGN_INSTANTIATE_OPS

} // namespace neuroalign
