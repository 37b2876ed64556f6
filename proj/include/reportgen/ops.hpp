#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "reportgen/errors.hpp"
#include "reportgen/rng.hpp"
#include "reportgen/tensor.hpp"

// Differentiable tensor operations. Every op computes its forward value
// eagerly and, when a tape is active and some input requires gradients,
// registers a backward closure. Closures capture input nodes (shared) and
// receive the output node by reference, so gradient buffers accumulate.

namespace reportgen {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
}

inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// c[i,j] = sum_t a[i,t] * b[t,j].  dA = dC * B^T, dB = A^T * dC.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw DimensionError("matmul: expects 2-D operands, got " + shape_to_string(a.shape()) +
                             " and " + shape_to_string(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw DimensionError("matmul: inner extents differ, " + shape_to_string(a.shape()) +
                             " x " + shape_to_string(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
            const double ait = av[i * k + t];
            if (ait == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += ait * bv[t * n + j];
        }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result(
        Shape{m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
        [an, bn, m, k, n](detail::TensorNode& self) {
            const auto& dc = self.grad;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += dc[i * n + j] * bn->value[t * n + j];
                        an->grad[i * k + t] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t t = 0; t < k; ++t)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += an->value[i * k + t] * dc[i * n + j];
                        bn->grad[t * n + j] += acc;
                    }
            }
        });
}

inline Tensor transpose(const Tensor& x) {
    if (x.shape().size() != 2)
        throw DimensionError("transpose: expects 2-D, got " + shape_to_string(x.shape()));
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.values()[i * c + j];
    auto xn = x.node();
    return detail::make_op_result(Shape{c, r}, std::move(out), x.requires_grad(),
                                  [xn, r, c](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (std::size_t i = 0; i < r; ++i)
                                          for (std::size_t j = 0; j < c; ++j)
                                              xn->grad[i * c + j] += self.grad[j * r + i];
                                  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                             shape_to_string(shape));
    auto xn = x.node();
    std::vector<double> out(x.values().begin(), x.values().end());
    return detail::make_op_result(std::move(shape), std::move(out), x.requires_grad(),
                                  [xn](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          xn->grad[i] += self.grad[i];
                                  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result(a.shape(), std::move(out),
                                  a.requires_grad() || b.requires_grad(),
                                  [an, bn](detail::TensorNode& self) {
                                      if (an->requires_grad) {
                                          an->ensure_grad();
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              an->grad[i] += self.grad[i];
                                      }
                                      if (bn->requires_grad) {
                                          bn->ensure_grad();
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              bn->grad[i] += self.grad[i];
                                      }
                                  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result(a.shape(), std::move(out),
                                  a.requires_grad() || b.requires_grad(),
                                  [an, bn](detail::TensorNode& self) {
                                      if (an->requires_grad) {
                                          an->ensure_grad();
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              an->grad[i] += self.grad[i];
                                      }
                                      if (bn->requires_grad) {
                                          bn->ensure_grad();
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              bn->grad[i] -= self.grad[i];
                                      }
                                  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result(a.shape(), std::move(out),
                                  a.requires_grad() || b.requires_grad(),
                                  [an, bn](detail::TensorNode& self) {
                                      if (an->requires_grad) {
                                          an->ensure_grad();
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              an->grad[i] += self.grad[i] * bn->value[i];
                                      }
                                      if (bn->requires_grad) {
                                          bn->ensure_grad();
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              bn->grad[i] += self.grad[i] * an->value[i];
                                      }
                                  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "div");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result(
        a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
        [an, bn](detail::TensorNode& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] / bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] -= self.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
            }
        });
}

inline Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
    auto xn = x.node();
    return detail::make_op_result(x.shape(), std::move(out), x.requires_grad(),
                                  [xn, c](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          xn->grad[i] += self.grad[i] * c;
                                  });
}

inline Tensor add_const(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + c;
    auto xn = x.node();
    return detail::make_op_result(x.shape(), std::move(out), x.requires_grad(),
                                  [xn](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          xn->grad[i] += self.grad[i];
                                  });
}

/// Multiply a tensor by a learned scalar (1-element tensor).
inline Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    if (s.size() != 1)
        throw DimensionError("mul_scalar: scalar operand has shape " + shape_to_string(s.shape()));
    const double sv = s.values()[0];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * sv;
    auto xn = x.node();
    auto sn = s.node();
    return detail::make_op_result(x.shape(), std::move(out),
                                  x.requires_grad() || s.requires_grad(),
                                  [xn, sn](detail::TensorNode& self) {
                                      if (xn->requires_grad) {
                                          xn->ensure_grad();
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              xn->grad[i] += self.grad[i] * sn->value[0];
                                      }
                                      if (sn->requires_grad) {
                                          sn->ensure_grad();
                                          double acc = 0.0;
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              acc += self.grad[i] * xn->value[i];
                                          sn->grad[0] += acc;
                                      }
                                  });
}

/// Adds a vector to every row: out[r, :] = x[r, :] + v.  v spans the last axis.
inline Tensor add_rowwise(const Tensor& x, const Tensor& v) {
    if (x.shape().empty() || v.shape().size() != 1 || x.shape().back() != v.shape()[0])
        throw DimensionError("add_rowwise: " + shape_to_string(x.shape()) + " + " +
                             shape_to_string(v.shape()));
    const std::size_t d = v.size();
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.values()[r * d + j] + v.values()[j];
    auto xn = x.node();
    auto vn = v.node();
    return detail::make_op_result(x.shape(), std::move(out),
                                  x.requires_grad() || v.requires_grad(),
                                  [xn, vn, rows, d](detail::TensorNode& self) {
                                      if (xn->requires_grad) {
                                          xn->ensure_grad();
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              xn->grad[i] += self.grad[i];
                                      }
                                      if (vn->requires_grad) {
                                          vn->ensure_grad();
                                          for (std::size_t r = 0; r < rows; ++r)
                                              for (std::size_t j = 0; j < d; ++j)
                                                  vn->grad[j] += self.grad[r * d + j];
                                      }
                                  });
}

/// Multiplies every row elementwise by a vector spanning the last axis.
inline Tensor mul_rowwise(const Tensor& x, const Tensor& v) {
    if (x.shape().empty() || v.shape().size() != 1 || x.shape().back() != v.shape()[0])
        throw DimensionError("mul_rowwise: " + shape_to_string(x.shape()) + " * " +
                             shape_to_string(v.shape()));
    const std::size_t d = v.size();
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.values()[r * d + j] * v.values()[j];
    auto xn = x.node();
    auto vn = v.node();
    return detail::make_op_result(
        x.shape(), std::move(out), x.requires_grad() || v.requires_grad(),
        [xn, vn, rows, d](detail::TensorNode& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        xn->grad[r * d + j] += self.grad[r * d + j] * vn->value[j];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j)
                        vn->grad[j] += self.grad[r * d + j] * xn->value[r * d + j];
            }
        });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.values()[i]);
    auto xn = x.node();
    return detail::make_op_result(x.shape(), std::move(out), x.requires_grad(),
                                  [xn](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
                                  });
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_value(x.values()[i]);
    auto xn = x.node();
    return detail::make_op_result(x.shape(), std::move(out), x.requires_grad(),
                                  [xn](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                          const double s = self.value[i];
                                          xn->grad[i] += self.grad[i] * s * (1.0 - s);
                                      }
                                  });
}

/// swish(x) = x * sigmoid(x); derivative s(x) * (1 + x * (1 - s(x))).
inline Tensor swish(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = v * detail::sigmoid_value(v);
    }
    auto xn = x.node();
    return detail::make_op_result(
        x.shape(), std::move(out), x.requires_grad(), [xn](detail::TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double v = xn->value[i];
                const double s = detail::sigmoid_value(v);
                xn->grad[i] += self.grad[i] * s * (1.0 + v * (1.0 - s));
            }
        });
}

// ---------------------------------------------------------------------------
// Softmax and normalization
// ---------------------------------------------------------------------------

/// Max-subtracted softmax along `axis`. Slices with no finite entry (fully
/// masked) are a contract violation.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.shape().size())
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_to_string(x.shape()));
    const std::size_t axis_len = x.shape()[axis];
    std::size_t inner = 1, outer = 1;
    for (std::size_t i = axis + 1; i < x.shape().size(); ++i) inner *= x.shape()[i];
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];

    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * axis_len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < axis_len; ++k)
                mx = std::max(mx, x.values()[base + k * inner]);
            if (!(mx > -std::numeric_limits<double>::infinity()))
                throw ContractError("softmax: slice has no unmasked entry");
            double denom = 0.0;
            for (std::size_t k = 0; k < axis_len; ++k) {
                const double e = std::exp(x.values()[base + k * inner] - mx);
                out[base + k * inner] = e;
                denom += e;
            }
            for (std::size_t k = 0; k < axis_len; ++k) out[base + k * inner] /= denom;
        }
    auto xn = x.node();
    return detail::make_op_result(
        x.shape(), std::move(out), x.requires_grad(),
        [xn, outer, inner, axis_len](detail::TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * axis_len * inner + in;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < axis_len; ++k) {
                        const std::size_t idx = base + k * inner;
                        dot += self.grad[idx] * self.value[idx];
                    }
                    for (std::size_t k = 0; k < axis_len; ++k) {
                        const std::size_t idx = base + k * inner;
                        xn->grad[idx] += self.value[idx] * (self.grad[idx] - dot);
                    }
                }
        });
}

/// Adds a constant buffer (e.g. a -inf attention mask). No gradient flows to
/// the buffer.
inline Tensor add_buffer(const Tensor& x, const std::vector<double>& buffer) {
    if (buffer.size() != x.size())
        throw DimensionError("add_buffer: buffer length " + std::to_string(buffer.size()) +
                             " vs tensor " + shape_to_string(x.shape()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + buffer[i];
    auto xn = x.node();
    return detail::make_op_result(x.shape(), std::move(out), x.requires_grad(),
                                  [xn](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                          if (std::isfinite(self.value[i]))
                                              xn->grad[i] += self.grad[i];
                                      }
                                  });
}

/// Layer normalization over the last axis: per-slice mean 0 / variance 1,
/// then affine gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    if (x.shape().empty()) throw DimensionError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xp = x.values().data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xp[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xp[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (xp[j] - mean) * istd;
            xhat[r * d + j] = h;
            out[r * d + j] = gain.values()[j] * h + bias.values()[j];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    const bool track = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    return detail::make_op_result(
        x.shape(), std::move(out), track,
        [xn, gn, bn, rows, d, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](detail::TensorNode& self) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* dy = self.grad.data() + r * d;
                const double* h = xhat.data() + r * d;
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) gn->grad[j] += dy[j] * h[j];
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dy[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = dy[j] * gn->value[j];
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                    }
                    mean_dh /= static_cast<double>(d);
                    mean_dh_h /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = dy[j] * gn->value[j];
                        xn->grad[r * d + j] += (dh - mean_dh - h[j] * mean_dh_h) * inv_std[r];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Regularization, lookup, reshuffling
// ---------------------------------------------------------------------------

/// Inverted dropout: surviving entries are scaled by 1/(1-p) so eval mode is
/// the identity. `training == false` or p == 0 returns the input unchanged.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() >= p ? keep_scale : 0.0;
        out[i] = x.values()[i] * mask[i];
    }
    auto xn = x.node();
    return detail::make_op_result(x.shape(), std::move(out), x.requires_grad(),
                                  [xn, mask = std::move(mask)](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                                          xn->grad[i] += self.grad[i] * mask[i];
                                  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no operands");
    const Shape& first = parts[0].shape();
    if (axis >= first.size())
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range");
    Shape out_shape = first;
    std::size_t total_axis = 0;
    for (const auto& part : parts) {
        if (part.shape().size() != first.size())
            throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i)
            if (i != axis && part.shape()[i] != first[i])
                throw DimensionError("concat: shape mismatch " + shape_to_string(part.shape()) +
                                     " vs " + shape_to_string(first));
        total_axis += part.shape()[axis];
    }
    out_shape[axis] = total_axis;

    std::size_t inner = 1, outer = 1;
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];

    std::vector<double> out(numel(out_shape));
    std::size_t offset = 0;  // in axis units
    bool track = false;
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    std::vector<std::size_t> axis_lens;
    for (const auto& part : parts) {
        const std::size_t alen = part.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < alen; ++k)
                for (std::size_t in = 0; in < inner; ++in)
                    out[(o * total_axis + offset + k) * inner + in] =
                        part.values()[(o * alen + k) * inner + in];
        offset += alen;
        track = track || part.requires_grad();
        nodes.push_back(part.node());
        axis_lens.push_back(alen);
    }
    return detail::make_op_result(
        std::move(out_shape), std::move(out), track,
        [nodes = std::move(nodes), axis_lens = std::move(axis_lens), outer, inner,
         total_axis](detail::TensorNode& self) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < nodes.size(); ++p) {
                const std::size_t alen = axis_lens[p];
                if (nodes[p]->requires_grad) {
                    nodes[p]->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t k = 0; k < alen; ++k)
                            for (std::size_t in = 0; in < inner; ++in)
                                nodes[p]->grad[(o * alen + k) * inner + in] +=
                                    self.grad[(o * total_axis + off + k) * inner + in];
                }
                off += alen;
            }
        });
}

/// out[t, :] = table[ids[t], :]. Gradients scatter-add into the table rows.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.shape().size() != 2)
        throw DimensionError("embedding_lookup: table must be 2-D, got " +
                             shape_to_string(table.shape()));
    const std::size_t vocab = table.shape()[0], d = table.shape()[1];
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
            throw VocabularyError("embedding_lookup: token id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(vocab));
    std::vector<double> out(ids.size() * d);
    for (std::size_t t = 0; t < ids.size(); ++t)
        for (std::size_t j = 0; j < d; ++j)
            out[t * d + j] = table.values()[static_cast<std::size_t>(ids[t]) * d + j];
    auto tn = table.node();
    return detail::make_op_result(Shape{ids.size(), d}, std::move(out), table.requires_grad(),
                                  [tn, ids, d](detail::TensorNode& self) {
                                      if (!tn->requires_grad) return;
                                      tn->ensure_grad();
                                      for (std::size_t t = 0; t < ids.size(); ++t)
                                          for (std::size_t j = 0; j < d; ++j)
                                              tn->grad[static_cast<std::size_t>(ids[t]) * d + j] +=
                                                  self.grad[t * d + j];
                                  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    auto xn = x.node();
    return detail::make_op_result(Shape{1}, std::vector<double>{acc}, x.requires_grad(),
                                  [xn](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (double& g : xn->grad) g += self.grad[0];
                                  });
}

inline Tensor mean_all(const Tensor& x) {
    if (x.size() == 0) throw DimensionError("mean_all: empty tensor");
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.size());
    auto xn = x.node();
    return detail::make_op_result(Shape{1}, std::vector<double>{acc * inv}, x.requires_grad(),
                                  [xn, inv](detail::TensorNode& self) {
                                      if (!xn->requires_grad) return;
                                      xn->ensure_grad();
                                      for (double& g : xn->grad) g += self.grad[0] * inv;
                                  });
}

// ---------------------------------------------------------------------------
// Spatial ops (single image, [C, H, W])
// ---------------------------------------------------------------------------

/// Zero-padded 2-D convolution over [C_in, H, W] with kernel
/// [C_out, C_in, kh, kw].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     std::size_t stride, std::size_t pad) {
    if (x.shape().size() != 3 || weight.shape().size() != 4)
        throw DimensionError("conv2d: expects [C,H,W] input and [Co,Ci,kh,kw] kernel, got " +
                             shape_to_string(x.shape()) + " and " +
                             shape_to_string(weight.shape()));
    const std::size_t ci = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const std::size_t co = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
    if (weight.shape()[1] != ci)
        throw DimensionError("conv2d: channel mismatch " + shape_to_string(x.shape()) + " vs " +
                             shape_to_string(weight.shape()));
    if (bias.shape() != Shape{co})
        throw DimensionError("conv2d: bias must have shape [" + std::to_string(co) + "]");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (h + 2 * pad < kh || w + 2 * pad < kw)
        throw DimensionError("conv2d: kernel larger than padded input");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;

    std::vector<double> out(co * oh * ow);
    const auto xv = x.values();
    const auto wv = weight.values();
    for (std::size_t c = 0; c < co; ++c)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double acc = bias.values()[c];
                for (std::size_t ic = 0; ic < ci; ++ic)
                    for (std::size_t a = 0; a < kh; ++a) {
                        const std::ptrdiff_t ih =
                            static_cast<std::ptrdiff_t>(i * stride + a) -
                            static_cast<std::ptrdiff_t>(pad);
                        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t b = 0; b < kw; ++b) {
                            const std::ptrdiff_t iw =
                                static_cast<std::ptrdiff_t>(j * stride + b) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += xv[(ic * h + ih) * w + iw] * wv[((c * ci + ic) * kh + a) * kw + b];
                        }
                    }
                out[(c * oh + i) * ow + j] = acc;
            }
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.node();
    const bool track = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
    return detail::make_op_result(
        Shape{co, oh, ow}, std::move(out), track,
        [xn, wn, bn, ci, h, w, co, kh, kw, oh, ow, stride, pad](detail::TensorNode& self) {
            if (bn->requires_grad) bn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (std::size_t c = 0; c < co; ++c)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        const double dy = self.grad[(c * oh + i) * ow + j];
                        if (dy == 0.0) continue;
                        if (bn->requires_grad) bn->grad[c] += dy;
                        for (std::size_t ic = 0; ic < ci; ++ic)
                            for (std::size_t a = 0; a < kh; ++a) {
                                const std::ptrdiff_t ih =
                                    static_cast<std::ptrdiff_t>(i * stride + a) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t b = 0; b < kw; ++b) {
                                    const std::ptrdiff_t iw =
                                        static_cast<std::ptrdiff_t>(j * stride + b) -
                                        static_cast<std::ptrdiff_t>(pad);
                                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                                    const std::size_t xi = (ic * h + ih) * w + iw;
                                    const std::size_t wi = ((c * ci + ic) * kh + a) * kw + b;
                                    if (wn->requires_grad) wn->grad[wi] += dy * xn->value[xi];
                                    if (xn->requires_grad) xn->grad[xi] += dy * wn->value[wi];
                                }
                            }
                    }
        });
}

/// Bilinear resize of [C, H, W] to [C, out_h, out_w] (half-pixel centers).
inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.shape().size() != 3)
        throw DimensionError("bilinear_resize: expects [C,H,W], got " +
                             shape_to_string(x.shape()));
    if (out_h == 0 || out_w == 0) throw ConfigError("bilinear_resize: empty target");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];

    struct Tap {
        std::size_t lo, hi;
        double frac;
    };
    auto make_taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> taps(out);
        const double ratio = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t i = 0; i < out; ++i) {
            double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
            if (src < 0.0) src = 0.0;
            std::size_t lo = static_cast<std::size_t>(src);
            if (lo >= in - 1 && in > 1) lo = in - 2;
            if (in == 1) lo = 0;
            const std::size_t hi = std::min(lo + 1, in - 1);
            taps[i] = {lo, hi, std::min(1.0, src - static_cast<double>(lo))};
        }
        return taps;
    };
    const auto hv = make_taps(h, out_h);
    const auto wv = make_taps(w, out_w);

    std::vector<double> out(c * out_h * out_w);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < out_h; ++i)
            for (std::size_t j = 0; j < out_w; ++j) {
                const Tap& th = hv[i];
                const Tap& tw = wv[j];
                const auto at = [&](std::size_t r, std::size_t col) {
                    return x.values()[(ch * h + r) * w + col];
                };
                const double top = at(th.lo, tw.lo) * (1 - tw.frac) + at(th.lo, tw.hi) * tw.frac;
                const double bot = at(th.hi, tw.lo) * (1 - tw.frac) + at(th.hi, tw.hi) * tw.frac;
                out[(ch * out_h + i) * out_w + j] = top * (1 - th.frac) + bot * th.frac;
            }
    auto xn = x.node();
    return detail::make_op_result(
        Shape{c, out_h, out_w}, std::move(out), x.requires_grad(),
        [xn, c, h, w, out_h, out_w, hv, wv](detail::TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < out_h; ++i)
                    for (std::size_t j = 0; j < out_w; ++j) {
                        const double dy = self.grad[(ch * out_h + i) * out_w + j];
                        if (dy == 0.0) continue;
                        const Tap& th = hv[i];
                        const Tap& tw = wv[j];
                        xn->grad[(ch * h + th.lo) * w + tw.lo] += dy * (1 - th.frac) * (1 - tw.frac);
                        xn->grad[(ch * h + th.lo) * w + tw.hi] += dy * (1 - th.frac) * tw.frac;
                        xn->grad[(ch * h + th.hi) * w + tw.lo] += dy * th.frac * (1 - tw.frac);
                        xn->grad[(ch * h + th.hi) * w + tw.hi] += dy * th.frac * tw.frac;
                    }
        });
}

/// Adaptive average pooling of [C, H, W] onto a [C, gh, gw] grid.
inline Tensor adaptive_avg_pool(const Tensor& x, std::size_t gh, std::size_t gw) {
    if (x.shape().size() != 3)
        throw DimensionError("adaptive_avg_pool: expects [C,H,W], got " +
                             shape_to_string(x.shape()));
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (gh == 0 || gw == 0 || gh > h || gw > w)
        throw ConfigError("adaptive_avg_pool: grid " + std::to_string(gh) + "x" +
                          std::to_string(gw) + " invalid for input " + shape_to_string(x.shape()));
    auto cell = [](std::size_t i, std::size_t in, std::size_t g) {
        const std::size_t lo = i * in / g;
        const std::size_t hi = ((i + 1) * in + g - 1) / g;
        return std::pair<std::size_t, std::size_t>{lo, hi};
    };
    std::vector<double> out(c * gh * gw);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < gh; ++i)
            for (std::size_t j = 0; j < gw; ++j) {
                const auto [r0, r1] = cell(i, h, gh);
                const auto [c0, c1] = cell(j, w, gw);
                double acc = 0.0;
                for (std::size_t r = r0; r < r1; ++r)
                    for (std::size_t col = c0; col < c1; ++col)
                        acc += x.values()[(ch * h + r) * w + col];
                out[(ch * gh + i) * gw + j] = acc / static_cast<double>((r1 - r0) * (c1 - c0));
            }
    auto xn = x.node();
    return detail::make_op_result(
        Shape{c, gh, gw}, std::move(out), x.requires_grad(),
        [xn, c, h, w, gh, gw, cell](detail::TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < gh; ++i)
                    for (std::size_t j = 0; j < gw; ++j) {
                        const auto [r0, r1] = cell(i, h, gh);
                        const auto [c0, c1] = cell(j, w, gw);
                        const double share = self.grad[(ch * gh + i) * gw + j] /
                                             static_cast<double>((r1 - r0) * (c1 - c0));
                        for (std::size_t r = r0; r < r1; ++r)
                            for (std::size_t col = c0; col < c1; ++col)
                                xn->grad[(ch * h + r) * w + col] += share;
                    }
        });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Teacher-forced token cross-entropy: mean over unmasked positions of
/// -log softmax(logits)[target]. Fused forward/backward for stability.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<bool>& mask) {
    if (logits.shape().size() != 2)
        throw DimensionError("cross_entropy: logits must be [T,V], got " +
                             shape_to_string(logits.shape()));
    const std::size_t t_len = logits.shape()[0], vocab = logits.shape()[1];
    if (targets.size() != t_len || mask.size() != t_len)
        throw DimensionError("cross_entropy: targets/mask length must match logits rows");
    std::size_t n_active = 0;
    for (bool m : mask)
        if (m) ++n_active;
    if (n_active == 0) throw DataError("cross_entropy: all positions masked out");

    std::vector<double> probs(logits.size());
    double loss = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
        if (!mask[t]) continue;
        const int target = targets[t];
        if (target < 0 || static_cast<std::size_t>(target) >= vocab)
            throw VocabularyError("cross_entropy: target id " + std::to_string(target) +
                                  " outside vocabulary of size " + std::to_string(vocab));
        const double* row = logits.values().data() + t * vocab;
        double mx = row[0];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) {
            const double e = std::exp(row[j] - mx);
            probs[t * vocab + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] /= denom;
        loss += std::log(denom) + mx - row[static_cast<std::size_t>(target)];
    }
    loss /= static_cast<double>(n_active);

    auto ln = logits.node();
    return detail::make_op_result(
        Shape{1}, std::vector<double>{loss}, logits.requires_grad(),
        [ln, targets, mask, probs = std::move(probs), t_len, vocab,
         n_active](detail::TensorNode& self) {
            if (!ln->requires_grad) return;
            ln->ensure_grad();
            const double upstream = self.grad[0] / static_cast<double>(n_active);
            for (std::size_t t = 0; t < t_len; ++t) {
                if (!mask[t]) continue;
                for (std::size_t j = 0; j < vocab; ++j) {
                    double g = probs[t * vocab + j];
                    if (j == static_cast<std::size_t>(targets[t])) g -= 1.0;
                    ln->grad[t * vocab + j] += upstream * g;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

inline void assert_finite(const Tensor& x, const std::string& context) {
    for (double v : x.values())
        if (!std::isfinite(v)) throw NumericError(context + ": non-finite value encountered");
}

}  // namespace reportgen
