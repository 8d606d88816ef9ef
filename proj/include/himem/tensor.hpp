#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "himem/errors.hpp"
#include "himem/rng.hpp"

namespace himem {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient touches this tensor
  bool requires_grad = false;
};

// Dense row-major 64-bit float array. Value-like handle: copies share the
// underlying buffer, which is what parameter updates and the tape rely on.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return filled(shape, 0.0, requires_grad);
  }

  static Tensor ones(const Shape& shape, bool requires_grad = false) {
    return filled(shape, 1.0, requires_grad);
  }

  static Tensor filled(const Shape& shape, double value,
                       bool requires_grad = false) {
    if (!std::isfinite(value)) throw NumericError("non-finite fill value");
    Tensor t = raw(shape, requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }

  static Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false) {
    if (!(lo < hi)) throw ValidationError("uniform init requires lo < hi");
    Tensor t = raw(shape, requires_grad);
    for (auto& x : t.impl_->data) x = rng.uniform(lo, hi);
    return t;
  }

  // Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)); fan_in is the
  // first dimension, fan_out the last.
  static Tensor scaled_uniform(const Shape& shape, Rng& rng,
                               bool requires_grad = false) {
    Tensor t = raw(shape, requires_grad);
    const double fan_in = static_cast<double>(shape.front());
    const double fan_out = static_cast<double>(shape.back());
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& x : t.impl_->data) x = rng.uniform(-s, s);
    return t;
  }

  static Tensor from_data(const Shape& shape, std::vector<double> values,
                          bool requires_grad = false) {
    Tensor t = raw(shape, requires_grad);
    if (values.size() != t.numel()) {
      throw ShapeError("from_data: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in from_data");
    }
    t.impl_->data = std::move(values);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  double value() const {
    if (numel() != 1) throw UsageError("value() requires a scalar tensor");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }

  bool grad_allocated() const { return !impl_->grad.empty(); }

  // Gradient buffer, allocated as zeros on first access.
  std::vector<double>& grad() {
    ensure_grad();
    return impl_->grad;
  }
  const std::vector<double>& grad() const {
    const_cast<Tensor*>(this)->ensure_grad();
    return impl_->grad;
  }

  void ensure_grad() {
    if (impl_->grad.size() != impl_->data.size()) {
      impl_->grad.assign(impl_->data.size(), 0.0);
    }
  }

  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  static Tensor raw(const Shape& shape, bool requires_grad) {
    if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
    for (auto d : shape) {
      if (d == 0) {
        throw ShapeError("dimension must be positive, got shape " +
                         shape_str(shape));
      }
    }
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = shape;
    t.impl_->data.resize(shape_numel(shape));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<TensorImpl> impl_;
};

// Linear record of primitive applications. Replaying it in reverse visits
// each recorded node exactly once; accumulation into input gradients is
// add-into, so fan-out sums naturally.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " +
                       shape_str(loss.shape()));
    }
    Tensor seed = loss;
    seed.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value in output of ") + op);
    }
  }
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Gradient of `out` if any flowed there; nullptr means nothing downstream
// touched this node and its contribution is zero.
inline const std::vector<double>* out_grad(const std::shared_ptr<TensorImpl>& o) {
  return o->grad.empty() ? nullptr : &o->grad;
}

inline std::vector<double>& acc_grad(const std::shared_ptr<TensorImpl>& t) {
  if (t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations. Each op computes forward immediately, rejects
// non-finite outputs, and records its backward rule when a gradient is
// needed.
// ---------------------------------------------------------------------------

// a: [..., m, k] (batched over leading dims), b: [k, n].
// dA = dC * B^T per batch, dB = A^T * dC summed over batches.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2) {
    throw ShapeError("matmul expects a rank>=2 and b rank 2, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dimension mismatch: " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.numel() / (m * k);

  Shape out_shape = a.shape();
  out_shape.back() = n;
  const bool rg = detail::any_requires_grad({&a, &b});
  Tensor out = Tensor::zeros(out_shape, rg);

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = out.data().data();
  for (std::size_t bt = 0; bt < batch; ++bt) {
    const double* A = pa + bt * m * k;
    double* C = pc + bt * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double* Ai = A + i * k;
      double* Ci = C + i * n;
      for (std::size_t l = 0; l < k; ++l) {
        const double av = Ai[l];
        const double* Bl = pb + l * n;
        for (std::size_t j = 0; j < n; ++j) Ci[j] += av * Bl[j];
      }
    }
  }
  detail::check_finite(out.data(), "matmul");

  if (rg) {
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl(), batch, m, k, n]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      const double* pg = go->data();
      if (ai->requires_grad) {
        double* ga = detail::acc_grad(ai).data();
        const double* pb2 = bi->data.data();
        for (std::size_t bt = 0; bt < batch; ++bt) {
          const double* G = pg + bt * m * n;
          double* GA = ga + bt * m * k;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t l = 0; l < k; ++l) {
              const double* Bl = pb2 + l * n;
              const double* Gi = G + i * n;
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += Gi[j] * Bl[j];
              GA[i * k + l] += s;
            }
          }
        }
      }
      if (bi->requires_grad) {
        double* gb = detail::acc_grad(bi).data();
        const double* pa2 = ai->data.data();
        for (std::size_t bt = 0; bt < batch; ++bt) {
          const double* A = pa2 + bt * m * k;
          const double* G = pg + bt * m * n;
          for (std::size_t i = 0; i < m; ++i) {
            const double* Gi = G + i * n;
            for (std::size_t l = 0; l < k; ++l) {
              const double av = A[i * k + l];
              double* GBl = gb + l * n;
              for (std::size_t j = 0; j < n; ++j) GBl[j] += av * Gi[j];
            }
          }
        }
      }
    });
  }
  return out;
}

inline Tensor transpose(Tape& tape, const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError("transpose expects rank 2, got " + shape_str(x.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m}, x.requires_grad());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.data()[j * m + i] = x.data()[i * n + j];
    }
  }
  if (x.requires_grad()) {
    tape.record([xi = x.impl(), oi = out.impl(), m, n]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      double* gx = detail::acc_grad(xi).data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          gx[i * n + j] += (*go)[j * m + i];
        }
      }
    });
  }
  return out;
}

// Row-stable softmax over the last dimension.
inline Tensor softmax_lastdim(Tape& tape, const Tensor& x) {
  const std::size_t width = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / width;
  Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * width;
    double* y = out.data().data() + r * width;
    double mx = in[0];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, in[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      y[j] = std::exp(in[j] - mx);
      sum += y[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < width; ++j) y[j] *= inv;
  }
  detail::check_finite(out.data(), "softmax_lastdim");

  if (x.requires_grad()) {
    tape.record([xi = x.impl(), oi = out.impl(), rows, width]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      double* gx = detail::acc_grad(xi).data();
      const double* y = oi->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = y + r * width;
        const double* gr = go->data() + r * width;
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += gr[j] * yr[j];
        double* gxr = gx + r * width;
        for (std::size_t j = 0; j < width; ++j) {
          gxr[j] += yr[j] * (gr[j] - dot);
        }
      }
    });
  }
  return out;
}

// Per-last-dim-slice normalization: (x - mean) / sqrt(var + eps) * gain + bias.
// Population variance.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  const std::size_t width = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != width ||
      bias.dim(0) != width) {
    throw ShapeError("layer_norm gain/bias must be [" + std::to_string(width) +
                     "]");
  }
  if (!(eps > 0.0)) throw ValidationError("layer_norm requires eps > 0");
  const std::size_t rows = x.numel() / width;
  const bool rg = detail::any_requires_grad({&x, &gain, &bias});
  Tensor out = Tensor::zeros(x.shape(), rg);

  // Normalized values and per-slice inverse stddev, kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * width;
    double mean = 0.0;
    for (std::size_t j = 0; j < width; ++j) mean += in[j];
    mean /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double d = in[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    double* xh = xhat->data() + r * width;
    double* y = out.data().data() + r * width;
    for (std::size_t j = 0; j < width; ++j) {
      xh[j] = (in[j] - mean) * inv;
      y[j] = xh[j] * gain.data()[j] + bias.data()[j];
    }
  }
  detail::check_finite(out.data(), "layer_norm");

  if (rg) {
    tape.record([xi = x.impl(), gi = gain.impl(), bi = bias.impl(),
                 oi = out.impl(), xhat, inv_std, rows, width]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      const double* g = gi->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = go->data() + r * width;
        const double* xh = xhat->data() + r * width;
        if (gi->requires_grad) {
          double* gg = detail::acc_grad(gi).data();
          for (std::size_t j = 0; j < width; ++j) gg[j] += gr[j] * xh[j];
        }
        if (bi->requires_grad) {
          double* gb = detail::acc_grad(bi).data();
          for (std::size_t j = 0; j < width; ++j) gb[j] += gr[j];
        }
        if (xi->requires_grad) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            const double dxh = gr[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= static_cast<double>(width);
          mean_dxh_xh /= static_cast<double>(width);
          double* gx = detail::acc_grad(xi).data() + r * width;
          const double inv = (*inv_std)[r];
          for (std::size_t j = 0; j < width; ++j) {
            const double dxh = gr[j] * g[j];
            gx[j] += inv * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

// Exact GELU: x * Phi(x). The project-wide FFN nonlinearity.
inline Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
  const double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = v * 0.5 * (1.0 + std::erf(v * inv_sqrt2));
  }
  detail::check_finite(out.data(), "gelu");
  if (x.requires_grad()) {
    tape.record([xi = x.impl(), oi = out.impl()]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      double* gx = detail::acc_grad(xi).data();
      const double inv_sqrt2 = 0.70710678118654752440;
      const double inv_sqrt_2pi = 0.39894228040143267794;
      for (std::size_t i = 0; i < xi->data.size(); ++i) {
        const double v = xi->data[i];
        const double phi_cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double phi_pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += (*go)[i] * (phi_cdf + v * phi_pdf);
      }
    });
  }
  return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const bool rg = detail::any_requires_grad({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), rg);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.data()[i] = a.data()[i] + b.data()[i];
  }
  detail::check_finite(out.data(), "add");
  if (rg) {
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl()]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      if (ai->requires_grad) {
        double* ga = detail::acc_grad(ai).data();
        for (std::size_t i = 0; i < go->size(); ++i) ga[i] += (*go)[i];
      }
      if (bi->requires_grad) {
        double* gb = detail::acc_grad(bi).data();
        for (std::size_t i = 0; i < go->size(); ++i) gb[i] += (*go)[i];
      }
    });
  }
  return out;
}

// x: [..., m] plus a length-m vector broadcast over all leading dims.
inline Tensor add_rowvec(Tape& tape, const Tensor& x, const Tensor& v) {
  const std::size_t width = x.dim(x.rank() - 1);
  if (v.rank() != 1 || v.dim(0) != width) {
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) +
                     " does not match last dim of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / width;
  const bool rg = detail::any_requires_grad({&x, &v});
  Tensor out = Tensor::zeros(x.shape(), rg);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) {
      out.data()[r * width + j] = x.data()[r * width + j] + v.data()[j];
    }
  }
  detail::check_finite(out.data(), "add_rowvec");
  if (rg) {
    tape.record([xi = x.impl(), vi = v.impl(), oi = out.impl(), rows, width]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      if (xi->requires_grad) {
        double* gx = detail::acc_grad(xi).data();
        for (std::size_t i = 0; i < go->size(); ++i) gx[i] += (*go)[i];
      }
      if (vi->requires_grad) {
        double* gv = detail::acc_grad(vi).data();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < width; ++j) {
            gv[j] += (*go)[r * width + j];
          }
        }
      }
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const bool rg = detail::any_requires_grad({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), rg);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.data()[i] = a.data()[i] * b.data()[i];
  }
  detail::check_finite(out.data(), "mul");
  if (rg) {
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl()]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      if (ai->requires_grad) {
        double* ga = detail::acc_grad(ai).data();
        for (std::size_t i = 0; i < go->size(); ++i) {
          ga[i] += (*go)[i] * bi->data[i];
        }
      }
      if (bi->requires_grad) {
        double* gb = detail::acc_grad(bi).data();
        for (std::size_t i = 0; i < go->size(); ++i) {
          gb[i] += (*go)[i] * ai->data[i];
        }
      }
    });
  }
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
  if (!std::isfinite(c)) throw NumericError("non-finite scale factor");
  Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
  for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * c;
  detail::check_finite(out.data(), "scale");
  if (x.requires_grad()) {
    tape.record([xi = x.impl(), oi = out.impl(), c]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      double* gx = detail::acc_grad(xi).data();
      for (std::size_t i = 0; i < go->size(); ++i) gx[i] += (*go)[i] * c;
    });
  }
  return out;
}

// Stack b's rows after a's rows; gradient splits at the seam.
inline Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_rows needs matching feature dims, got " +
                     shape_str(a.shape()) + " + " + shape_str(b.shape()));
  }
  const std::size_t n1 = a.dim(0), n2 = b.dim(0), d = a.dim(1);
  const bool rg = detail::any_requires_grad({&a, &b});
  Tensor out = Tensor::zeros({n1 + n2, d}, rg);
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + n1 * d);
  if (rg) {
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl(), n1, n2, d]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      if (ai->requires_grad) {
        double* ga = detail::acc_grad(ai).data();
        for (std::size_t i = 0; i < n1 * d; ++i) ga[i] += (*go)[i];
      }
      if (bi->requires_grad) {
        double* gb = detail::acc_grad(bi).data();
        for (std::size_t i = 0; i < n2 * d; ++i) gb[i] += (*go)[n1 * d + i];
      }
    });
  }
  return out;
}

// Side-by-side concatenation of [n, d_i] parts; used to merge attention heads.
inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t n = parts[0].dim(0);
  std::size_t total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != n) {
      throw ShapeError("concat_cols: inconsistent row counts");
    }
    total += p.dim(1);
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({n, total}, rg);
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(p.data().begin() + i * w, p.data().begin() + (i + 1) * w,
                out.data().begin() + i * total + col);
    }
    col += w;
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    tape.record([impls, oi = out.impl(), n, total]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      std::size_t col = 0;
      for (const auto& pi : impls) {
        const std::size_t w = pi->shape[1];
        if (pi->requires_grad) {
          double* gp = detail::acc_grad(pi).data();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              gp[i * w + j] += (*go)[i * total + col + j];
            }
          }
        }
        col += w;
      }
    });
  }
  return out;
}

// Rows [r0, r1) of a rank-2 tensor; gradient scatters back into that range.
inline Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t r0,
                         std::size_t r1) {
  if (x.rank() != 2) {
    throw ShapeError("slice_rows expects rank 2, got " + shape_str(x.shape()));
  }
  if (r0 >= r1 || r1 > x.dim(0)) {
    throw RangeError("slice_rows [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::size_t d = x.dim(1);
  Tensor out = Tensor::zeros({r1 - r0, d}, x.requires_grad());
  std::copy(x.data().begin() + r0 * d, x.data().begin() + r1 * d,
            out.data().begin());
  if (x.requires_grad()) {
    tape.record([xi = x.impl(), oi = out.impl(), r0, d]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      double* gx = detail::acc_grad(xi).data();
      for (std::size_t i = 0; i < go->size(); ++i) {
        gx[r0 * d + i] += (*go)[i];
      }
    });
  }
  return out;
}

inline Tensor sum_all(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros({1}, x.requires_grad());
  double s = 0.0;
  for (double v : x.data()) s += v;
  out.data()[0] = s;
  detail::check_finite(out.data(), "sum_all");
  if (x.requires_grad()) {
    tape.record([xi = x.impl(), oi = out.impl()]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      double* gx = detail::acc_grad(xi).data();
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += (*go)[0];
    });
  }
  return out;
}

// Mean over rows of -sum_k target * log softmax(logits). Targets are fixed
// distributions, never a gradient path.
inline Tensor cross_entropy_soft(Tape& tape, const Tensor& logits,
                                 const Tensor& target) {
  if (logits.rank() != 2 || target.rank() != 2 ||
      logits.shape() != target.shape()) {
    throw ShapeError("cross_entropy_soft shape mismatch: " +
                     shape_str(logits.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  if (target.requires_grad()) {
    throw UsageError("cross_entropy_soft target must not require grad");
  }
  const std::size_t rows = logits.dim(0), width = logits.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double t = target.data()[r * width + j];
      if (t < 0.0) {
        throw ValidationError("cross_entropy_soft target has negative entry in row " +
                              std::to_string(r));
      }
      sum += t;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError("cross_entropy_soft target row " +
                            std::to_string(r) + " sums to " +
                            std::to_string(sum) + ", expected 1");
    }
  }

  Tensor out = Tensor::zeros({1}, logits.requires_grad());
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = logits.data().data() + r * width;
    double mx = l[0];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, l[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) sum += std::exp(l[j] - mx);
    const double lse = mx + std::log(sum);
    double row_loss = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double t = target.data()[r * width + j];
      if (t != 0.0) row_loss += t * (lse - l[j]);
      (*probs)[r * width + j] = std::exp(l[j] - lse);
    }
    total += row_loss;
  }
  out.data()[0] = total / static_cast<double>(rows);
  detail::check_finite(out.data(), "cross_entropy_soft");

  if (logits.requires_grad()) {
    tape.record([li = logits.impl(), ti = target.impl(), oi = out.impl(),
                 probs, rows, width]() {
      const std::vector<double>* go = detail::out_grad(oi);
      if (!go) return;
      const double g = (*go)[0] / static_cast<double>(rows);
      double* gl = detail::acc_grad(li).data();
      for (std::size_t i = 0; i < rows * width; ++i) {
        gl[i] += g * ((*probs)[i] - ti->data[i]);
      }
    });
  }
  return out;
}

// Max relative error between the analytic gradient of f at x and central
// finite differences, coordinate by coordinate. The denominator is
// max(|analytic|, |numeric|, 1e-5); the floor turns the test absolute for
// tiny gradients, where the difference estimate itself carries roundoff
// noise near |f|*eps/h that no relative criterion can beat. f must be a
// pure function of x (and any fixed captures) so that re-evaluation after
// perturbation is meaningful.
inline double finite_diff_check(const std::function<Tensor(Tape&)>& f,
                                Tensor x, double h = 1e-5) {
  if (!(h > 0.0)) throw ValidationError("finite_diff_check requires h > 0");
  if (!x.requires_grad()) {
    throw UsageError("finite_diff_check target must require grad");
  }

  x.zero_grad();
  Tape tape;
  Tensor loss = f(tape);
  tape.backward(loss);
  std::vector<double> analytic = x.grad();

  double max_rel = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    Tape tp;
    const double fp = f(tp).value();
    x.data()[i] = saved - h;
    Tape tm;
    const double fm = f(tm).value();
    x.data()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-5});
    max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace himem
