#include "hfgan/ops.hpp"

#include <cmath>
#include <sstream>

namespace hfgan {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

template <typename S>
Tensor<S> scalar_tensor(S v) {
  return Tensor<S>(Shape{1}, v);
}

template <typename S, typename F, typename D>
Var<S> unary(const Var<S>& x, F f, D deriv) {
  Tensor<S> out(x.shape(), x.value().array().unaryExpr(f).eval());
  return make_op<S>(std::move(out), {x}, [deriv](Node<S>& self) {
    const auto& xv = self.inputs[0]->value.array();
    const auto& yv = self.value.array();
    const auto& g = self.grad.array();
    auto& gx = self.inputs[0]->grad_buffer();
    for (Index i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

template <typename S>
S sigmoid_scalar(S x) {
  if (x >= 0) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
void im2col(const S* x, Index channels, Index height, Index width, Index k, Index stride, Index pad,
            Index out_h, Index out_w, S* cols) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    const S* xc = x + c * height * width;
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        S* dst = cols + ((c * k + ki) * k + kj) * plane;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index iy = oh * stride - pad + ki;
          S* row = dst + oh * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, S(0));
            continue;
          }
          const S* src = xc + iy * width;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index ix = ow * stride - pad + kj;
            row[ow] = (ix >= 0 && ix < width) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* cols, Index channels, Index height, Index width, Index k, Index stride, Index pad,
            Index out_h, Index out_w, S* x) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    S* xc = x + c * height * width;
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const S* src = cols + ((c * k + ki) * k + kj) * plane;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index iy = oh * stride - pad + ki;
          if (iy < 0 || iy >= height) continue;
          S* dst = xc + iy * width;
          const S* row = src + oh * out_w;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index ix = ow * stride - pad + kj;
            if (ix >= 0 && ix < width) dst[ix] += row[ow];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Arithmetic

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "add");
  Tensor<S> out(a.shape(), (a.value().array() + b.value().array()).eval());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->grad_buffer() += self.grad.array();
    if (self.input_needs_grad(1)) self.inputs[1]->grad_buffer() += self.grad.array();
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape(), (a.value().array() - b.value().array()).eval());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->grad_buffer() += self.grad.array();
    if (self.input_needs_grad(1)) self.inputs[1]->grad_buffer() -= self.grad.array();
  });
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape(), (a.value().array() * b.value().array()).eval());
  return make_op<S>(std::move(out), {a, b}, [](Node<S>& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->grad_buffer() += self.grad.array() * self.inputs[1]->value.array();
    if (self.input_needs_grad(1)) self.inputs[1]->grad_buffer() += self.grad.array() * self.inputs[0]->value.array();
  });
}

template <typename S>
Var<S> scale(const Var<S>& a, S factor) {
  Tensor<S> out(a.shape(), (a.value().array() * factor).eval());
  return make_op<S>(std::move(out), {a}, [factor](Node<S>& self) {
    self.inputs[0]->grad_buffer() += self.grad.array() * factor;
  });
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S offset) {
  Tensor<S> out(a.shape(), (a.value().array() + offset).eval());
  return make_op<S>(std::move(out), {a}, [](Node<S>& self) { self.inputs[0]->grad_buffer() += self.grad.array(); });
}

template <typename S>
Var<S> sum_all(const std::vector<Var<S>>& terms) {
  if (terms.empty()) throw ShapeError("sum_all: empty term list");
  Array1<S> acc = terms.front().value().array();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    require_same_shape(terms.front(), terms[i], "sum_all");
    acc += terms[i].value().array();
  }
  return make_op<S>(Tensor<S>(terms.front().shape(), std::move(acc)), terms, [](Node<S>& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (self.input_needs_grad(i)) self.inputs[i]->grad_buffer() += self.grad.array();
  });
}

template <typename S>
Var<S> add_row_broadcast(const Var<S>& x, const Var<S>& v) {
  if (x.value().rank() != 2 || v.value().rank() != 1 || v.dim(0) != x.dim(1))
    throw ShapeError("add_row_broadcast: need [M,C] and [C], got " + shape_string(x.shape()) + " and " +
                     shape_string(v.shape()));
  Tensor<S> out = x.value();
  out.matrix().rowwise() += v.value().array().matrix().transpose();
  return make_op<S>(std::move(out), {x, v}, [](Node<S>& self) {
    if (self.input_needs_grad(0)) self.inputs[0]->grad_buffer() += self.grad.array();
    if (self.input_needs_grad(1))
      self.inputs[1]->grad_buffer() += self.grad.matrix().colwise().sum().transpose().array();
  });
}

template <typename S>
Var<S> scale_channels(const Var<S>& x, const Var<S>& m) {
  if (m.value().rank() != 1 || m.dim(0) != x.dim(0))
    throw ShapeError("scale_channels: weights " + shape_string(m.shape()) + " do not match " +
                     shape_string(x.shape()));
  Tensor<S> out = x.value();
  out.matrix().array().colwise() *= m.value().array();
  return make_op<S>(std::move(out), {x, m}, [](Node<S>& self) {
    const auto g = self.grad.matrix();
    if (self.input_needs_grad(0)) {
      auto& gx = self.inputs[0]->grad_buffer();
      Tensor<S> tmp = self.grad;
      tmp.matrix().array().colwise() *= self.inputs[1]->value.array();
      gx += tmp.array();
    }
    if (self.input_needs_grad(1))
      self.inputs[1]->grad_buffer() +=
          (g.array() * self.inputs[0]->value.matrix().array()).rowwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Activations

template <typename S>
Var<S> silu(const Var<S>& x) {
  return unary(
      x, [](S v) { return v * sigmoid_scalar(v); },
      [](S v, S) {
        const S s = sigmoid_scalar(v);
        return s * (S(1) + v * (S(1) - s));
      });
}

template <typename S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
  return unary(
      x, [slope](S v) { return v > 0 ? v : slope * v; }, [slope](S v, S) { return v > 0 ? S(1) : slope; });
}

template <typename S>
Var<S> tanh(const Var<S>& x) {
  return unary(
      x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  return unary(
      x, [](S v) { return sigmoid_scalar(v); }, [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> gelu(const Var<S>& x) {
  constexpr S inv_sqrt2 = S(0.70710678118654752440);
  constexpr S inv_sqrt_2pi = S(0.39894228040143267794);
  return unary(
      x, [](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); },
      [](S v, S) { return S(0.5) * (S(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(S(-0.5) * v * v); });
}

template <typename S>
Var<S> exp(const Var<S>& x) {
  return unary(
      x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <typename S>
Var<S> log_sigmoid(const Var<S>& x) {
  return unary(
      x, [](S v) { return std::min(v, S(0)) - std::log1p(std::exp(-std::abs(v))); },
      [](S v, S) { return sigmoid_scalar(-v); });
}

// ---------------------------------------------------------------------------
// Structure

template <typename S>
Var<S> reshape(const Var<S>& x, Shape shape) {
  Tensor<S> out = x.value().reshaped(std::move(shape));
  return make_op<S>(std::move(out), {x}, [](Node<S>& self) { self.inputs[0]->grad_buffer() += self.grad.array(); });
}

template <typename S>
Var<S> transpose(const Var<S>& x) {
  if (x.value().rank() != 2) throw ShapeError("transpose: rank-2 input required, got " + shape_string(x.shape()));
  Tensor<S> out(Shape{x.dim(1), x.dim(0)});
  out.matrix() = x.value().matrix().transpose();
  return make_op<S>(std::move(out), {x}, [](Node<S>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    Eigen::Map<RowMatrix<S>> gm(gx.data(), self.grad.dim(1), self.grad.dim(0));
    gm += self.grad.matrix().transpose();
  });
}

template <typename S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  Index lead = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) throw ShapeError("concat: trailing shape mismatch " + shape_string(p.shape()));
    lead += p.dim(0);
  }
  Shape shape = parts.front().shape();
  shape[0] = lead;
  Tensor<S> out(shape);
  Index offset = 0;
  for (const auto& p : parts) {
    out.array().segment(offset, p.size()) = p.value().array();
    offset += p.size();
  }
  return make_op<S>(std::move(out), parts, [](Node<S>& self) {
    Index off = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const Index n = self.inputs[i]->value.size();
      if (self.input_needs_grad(i)) self.inputs[i]->grad_buffer() += self.grad.array().segment(off, n);
      off += n;
    }
  });
}

template <typename S>
Var<S> stack(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  std::vector<Var<S>> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts.front().shape()) throw ShapeError("stack: shape mismatch " + shape_string(p.shape()));
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted);
}

template <typename S>
Var<S> select(const Var<S>& x, Index i) {
  if (i < 0 || i >= x.dim(0)) throw IndexError("select: index out of range");
  Shape tail(x.shape().begin() + 1, x.shape().end());
  const Index n = numel(tail);
  Tensor<S> out(tail, x.value().array().segment(i * n, n).eval());
  return make_op<S>(std::move(out), {x}, [i, n](Node<S>& self) {
    self.inputs[0]->grad_buffer().segment(i * n, n) += self.grad.array();
  });
}

template <typename S>
Var<S> unfold_patches(const Var<S>& z, Index patch) {
  if (z.value().rank() != 3) throw ShapeError("unfold_patches: [c,h,w] input required");
  const Index c = z.dim(0), h = z.dim(1), w = z.dim(2);
  if (patch <= 0 || h % patch || w % patch)
    throw ShapeError("latent " + shape_string(z.shape()) + " not divisible by patch size " + std::to_string(patch));
  const Index ph = h / patch, pw = w / patch, feat = c * patch * patch;
  std::vector<Index> index(static_cast<std::size_t>(ph * pw * feat));
  for (Index py = 0; py < ph; ++py)
    for (Index px = 0; px < pw; ++px)
      for (Index ci = 0; ci < c; ++ci)
        for (Index dy = 0; dy < patch; ++dy)
          for (Index dx = 0; dx < patch; ++dx) {
            const Index m = py * pw + px;
            const Index f = (ci * patch + dy) * patch + dx;
            index[static_cast<std::size_t>(m * feat + f)] = (ci * h + py * patch + dy) * w + px * patch + dx;
          }
  Tensor<S> out(Shape{ph * pw, feat});
  for (std::size_t j = 0; j < index.size(); ++j) out[static_cast<Index>(j)] = z.value()[index[j]];
  return make_op<S>(std::move(out), {z}, [index = std::move(index)](Node<S>& self) {
    auto& gz = self.inputs[0]->grad_buffer();
    for (std::size_t j = 0; j < index.size(); ++j) gz[index[j]] += self.grad[static_cast<Index>(j)];
  });
}

template <typename S>
Var<S> fold_patches(const Var<S>& tokens, Index channels, Index height, Index width, Index patch) {
  if (patch <= 0 || height % patch || width % patch) throw ShapeError("fold_patches: size not divisible by patch");
  const Index ph = height / patch, pw = width / patch, feat = channels * patch * patch;
  if (tokens.value().rank() != 2 || tokens.dim(0) != ph * pw || tokens.dim(1) != feat)
    throw ShapeError("fold_patches: tokens " + shape_string(tokens.shape()) + " do not tile " +
                     shape_string({channels, height, width}));
  std::vector<Index> index(static_cast<std::size_t>(channels * height * width));
  for (Index py = 0; py < ph; ++py)
    for (Index px = 0; px < pw; ++px)
      for (Index ci = 0; ci < channels; ++ci)
        for (Index dy = 0; dy < patch; ++dy)
          for (Index dx = 0; dx < patch; ++dx) {
            const Index m = py * pw + px;
            const Index f = (ci * patch + dy) * patch + dx;
            index[static_cast<std::size_t>((ci * height + py * patch + dy) * width + px * patch + dx)] = m * feat + f;
          }
  Tensor<S> out(Shape{channels, height, width});
  for (std::size_t j = 0; j < index.size(); ++j) out[static_cast<Index>(j)] = tokens.value()[index[j]];
  return make_op<S>(std::move(out), {tokens}, [index = std::move(index)](Node<S>& self) {
    auto& gt = self.inputs[0]->grad_buffer();
    for (std::size_t j = 0; j < index.size(); ++j) gt[index[j]] += self.grad[static_cast<Index>(j)];
  });
}

template <typename S>
Var<S> upsample_nearest2x(const Var<S>& x) {
  if (x.value().rank() != 3) throw ShapeError("upsample_nearest2x: [C,H,W] input required");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<S> out(Shape{c, 2 * h, 2 * w});
  for (Index ci = 0; ci < c; ++ci)
    for (Index y = 0; y < 2 * h; ++y)
      for (Index xx = 0; xx < 2 * w; ++xx) out.at(ci, y, xx) = x.value().at(ci, y / 2, xx / 2);
  return make_op<S>(std::move(out), {x}, [c, h, w](Node<S>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (Index ci = 0; ci < c; ++ci)
      for (Index y = 0; y < 2 * h; ++y)
        for (Index xx = 0; xx < 2 * w; ++xx) gx[(ci * h + y / 2) * w + xx / 2] += self.grad.at(ci, y, xx);
  });
}

// ---------------------------------------------------------------------------
// Layers

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, Index stride, Index padding) {
  if (x.value().rank() != 3 || weight.value().rank() != 4 || weight.dim(1) != x.dim(0) ||
      weight.dim(2) != weight.dim(3))
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + " incompatible with kernel " +
                     shape_string(weight.shape()));
  const Index ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index co = weight.dim(0), k = weight.dim(2);
  const Index oh = (h + 2 * padding - k) / stride + 1;
  const Index ow = (w + 2 * padding - k) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input " + shape_string(x.shape()) + " smaller than kernel");
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);
  const Index kdim = ci * k * k;
  const Index plane = oh * ow;
  Eigen::Map<const RowMatrix<S>> wm(weight.value().data(), co, kdim);

  Tensor<S> out(Shape{co, oh, ow});
  auto om = out.matrix();
  if (pointwise) {
    om.noalias() = wm * x.value().matrix();
  } else {
    RowMatrix<S> cols(kdim, plane);
    im2col(x.value().data(), ci, h, w, k, stride, padding, oh, ow, cols.data());
    om.noalias() = wm * cols;
  }
  const bool has_bias = static_cast<bool>(bias) && bias.size() > 0;
  if (has_bias) om.colwise() += bias.value().array().matrix();

  std::vector<Var<S>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<S>(std::move(out), std::move(inputs),
                    [ci, h, w, co, k, stride, padding, oh, ow, kdim, plane, pointwise, has_bias](Node<S>& self) {
                      Eigen::Map<const RowMatrix<S>> g(self.grad.data(), co, plane);
                      const auto& xin = self.inputs[0]->value;
                      RowMatrix<S> cols;
                      if (!pointwise && self.input_needs_grad(1)) {
                        cols.resize(kdim, plane);
                        im2col(xin.data(), ci, h, w, k, stride, padding, oh, ow, cols.data());
                      }
                      if (self.input_needs_grad(1)) {
                        auto& gw = self.inputs[1]->grad_buffer();
                        Eigen::Map<RowMatrix<S>> gwm(gw.data(), co, kdim);
                        if (pointwise)
                          gwm.noalias() += g * xin.matrix().transpose();
                        else
                          gwm.noalias() += g * cols.transpose();
                      }
                      if (has_bias && self.input_needs_grad(2))
                        self.inputs[2]->grad_buffer() += g.rowwise().sum().array();
                      if (self.input_needs_grad(0)) {
                        Eigen::Map<const RowMatrix<S>> wmat(self.inputs[1]->value.data(), co, kdim);
                        auto& gx = self.inputs[0]->grad_buffer();
                        if (pointwise) {
                          Eigen::Map<RowMatrix<S>> gxm(gx.data(), ci, plane);
                          gxm.noalias() += wmat.transpose() * g;
                        } else {
                          RowMatrix<S> gcols = wmat.transpose() * g;
                          col2im(gcols.data(), ci, h, w, k, stride, padding, oh, ow, gx.data());
                        }
                      }
                    });
}

template <typename S>
Var<S> conv1d_vector(const Var<S>& v, const Var<S>& kernel, const Var<S>& bias) {
  if (v.value().rank() != 1 || kernel.value().rank() != 1 || kernel.size() % 2 == 0)
    throw ShapeError("conv1d_vector: vector input and odd-length kernel required");
  const Index n = v.size(), k = kernel.size(), r = k / 2;
  const S b = bias ? bias.value()[0] : S(0);
  Tensor<S> out(Shape{n});
  for (Index c = 0; c < n; ++c) {
    S acc = b;
    for (Index j = 0; j < k; ++j) {
      const Index src = c + j - r;
      if (src >= 0 && src < n) acc += kernel.value()[j] * v.value()[src];
    }
    out[c] = acc;
  }
  std::vector<Var<S>> inputs{v, kernel};
  if (bias) inputs.push_back(bias);
  const bool has_bias = static_cast<bool>(bias);
  return make_op<S>(std::move(out), std::move(inputs), [n, k, r, has_bias](Node<S>& self) {
    const auto& g = self.grad;
    const auto& vin = self.inputs[0]->value;
    const auto& ker = self.inputs[1]->value;
    for (Index c = 0; c < n; ++c) {
      for (Index j = 0; j < k; ++j) {
        const Index src = c + j - r;
        if (src < 0 || src >= n) continue;
        if (self.input_needs_grad(0)) self.inputs[0]->grad_buffer()[src] += g[c] * ker[j];
        if (self.input_needs_grad(1)) self.inputs[1]->grad_buffer()[j] += g[c] * vin[src];
      }
    }
    if (has_bias && self.input_needs_grad(2)) self.inputs[2]->grad_buffer()[0] += g.array().sum();
  });
}

template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  const bool vector_input = x.value().rank() == 1;
  const Index in = weight.dim(1), outd = weight.dim(0);
  const Index m = vector_input ? 1 : x.dim(0);
  if (weight.value().rank() != 2 || (vector_input ? x.dim(0) : x.dim(1)) != in || (!vector_input && x.value().rank() != 2))
    throw ShapeError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                     shape_string(weight.shape()));
  Eigen::Map<const RowMatrix<S>> xm(x.value().data(), m, in);
  Eigen::Map<const RowMatrix<S>> wm(weight.value().data(), outd, in);
  Tensor<S> out(vector_input ? Shape{outd} : Shape{m, outd});
  Eigen::Map<RowMatrix<S>> om(out.data(), m, outd);
  om.noalias() = xm * wm.transpose();
  const bool has_bias = static_cast<bool>(bias) && bias.size() > 0;
  if (has_bias) om.rowwise() += bias.value().array().matrix().transpose();
  std::vector<Var<S>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<S>(std::move(out), std::move(inputs), [m, in, outd, has_bias](Node<S>& self) {
    Eigen::Map<const RowMatrix<S>> g(self.grad.data(), m, outd);
    if (self.input_needs_grad(0)) {
      Eigen::Map<RowMatrix<S>> gx(self.inputs[0]->grad_buffer().data(), m, in);
      gx.noalias() += g * Eigen::Map<const RowMatrix<S>>(self.inputs[1]->value.data(), outd, in);
    }
    if (self.input_needs_grad(1)) {
      Eigen::Map<RowMatrix<S>> gw(self.inputs[1]->grad_buffer().data(), outd, in);
      gw.noalias() += g.transpose() * Eigen::Map<const RowMatrix<S>>(self.inputs[0]->value.data(), m, in);
    }
    if (has_bias && self.input_needs_grad(2)) self.inputs[2]->grad_buffer() += g.colwise().sum().transpose().array();
  });
}

namespace {

// Normalizes each row of a rows x cols view. Shared by instance and layer norm.
template <typename S>
Var<S> row_normalize(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps, Index rows, Index cols,
                     bool affine_per_row) {
  Eigen::Map<const RowMatrix<S>> xm(x.value().data(), rows, cols);
  const bool affine = static_cast<bool>(gamma) && gamma.size() > 0;
  Array1<S> mu = xm.rowwise().mean().array();
  RowMatrix<S> centered = xm.colwise() - mu.matrix();
  Array1<S> inv_std = ((centered.array().square().rowwise().sum() / S(cols)) + eps).rsqrt();
  RowMatrix<S> xhat = centered.array().colwise() * inv_std;
  Tensor<S> out(x.shape());
  Eigen::Map<RowMatrix<S>> om(out.data(), rows, cols);
  om = xhat;
  if (affine) {
    if (affine_per_row) {
      om.array().colwise() *= gamma.value().array();
      om.array().colwise() += beta.value().array();
    } else {
      om.array().rowwise() *= gamma.value().array().transpose();
      om.array().rowwise() += beta.value().array().transpose();
    }
  }
  std::vector<Var<S>> inputs{x};
  if (affine) {
    inputs.push_back(gamma);
    inputs.push_back(beta);
  }
  return make_op<S>(std::move(out), std::move(inputs),
                    [rows, cols, affine, affine_per_row, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                        Node<S>& self) {
                      Eigen::Map<const RowMatrix<S>> g(self.grad.data(), rows, cols);
                      if (affine && self.input_needs_grad(1)) {
                        auto& gg = self.inputs[1]->grad_buffer();
                        if (affine_per_row)
                          gg += (g.array() * xhat.array()).rowwise().sum();
                        else
                          gg += (g.array() * xhat.array()).colwise().sum().transpose();
                      }
                      if (affine && self.input_needs_grad(2)) {
                        auto& gb = self.inputs[2]->grad_buffer();
                        if (affine_per_row)
                          gb += g.array().rowwise().sum();
                        else
                          gb += g.array().colwise().sum().transpose();
                      }
                      if (self.input_needs_grad(0)) {
                        RowMatrix<S> dxhat = g;
                        if (affine) {
                          if (affine_per_row)
                            dxhat.array().colwise() *= self.inputs[1]->value.array();
                          else
                            dxhat.array().rowwise() *= self.inputs[1]->value.array().transpose();
                        }
                        Array1<S> mean_d = dxhat.rowwise().mean().array();
                        Array1<S> mean_dx = (dxhat.array() * xhat.array()).rowwise().mean();
                        RowMatrix<S> dx = dxhat;
                        dx.colwise() -= mean_d.matrix();
                        dx.array() -= xhat.array().colwise() * mean_dx;
                        dx.array().colwise() *= inv_std;
                        Eigen::Map<RowMatrix<S>> gx(self.inputs[0]->grad_buffer().data(), rows, cols);
                        gx += dx;
                      }
                    });
}

}  // namespace

template <typename S>
Var<S> instance_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  if (x.value().rank() < 2) throw ShapeError("instance_norm: [C, ...] input required");
  const Index c = x.dim(0);
  return row_normalize(x, gamma, beta, eps, c, x.size() / c, true);
}

template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps) {
  const Index c = x.shape().back();
  return row_normalize(x, gamma, beta, eps, x.size() / c, c, false);
}

template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
  const Index c = x.dim(0);
  const Index n = x.size() / c;
  Tensor<S> out(Shape{c}, x.value().matrix().rowwise().mean().array().eval());
  return make_op<S>(std::move(out), {x}, [c, n](Node<S>& self) {
    Eigen::Map<RowMatrix<S>> gx(self.inputs[0]->grad_buffer().data(), c, n);
    gx.colwise() += (self.grad.array() / S(n)).matrix();
  });
}

template <typename S>
Var<S> softmax(const Var<S>& x, int axis) {
  if (x.value().rank() != 2 || (axis != 0 && axis != 1)) throw ShapeError("softmax: rank-2 input, axis 0 or 1");
  RowMatrix<S> y = x.value().matrix();
  if (axis == 1) {
    y.colwise() -= y.rowwise().maxCoeff();
    y = y.array().exp();
    y.array().colwise() /= y.array().rowwise().sum();
  } else {
    y.rowwise() -= y.colwise().maxCoeff();
    y = y.array().exp();
    y.array().rowwise() /= y.array().colwise().sum();
  }
  Tensor<S> out(x.shape());
  out.matrix() = y;
  return make_op<S>(std::move(out), {x}, [axis](Node<S>& self) {
    const auto yv = self.value.matrix();
    const auto g = self.grad.matrix();
    RowMatrix<S> gy = (g.array() * yv.array()).matrix();
    RowMatrix<S> dx;
    if (axis == 1)
      dx = (yv.array() * (g.array().colwise() - gy.array().rowwise().sum())).matrix();
    else
      dx = (yv.array() * (g.array().rowwise() - gy.array().colwise().sum())).matrix();
    Eigen::Map<RowMatrix<S>> gx(self.inputs[0]->grad_buffer().data(), yv.rows(), yv.cols());
    gx += dx;
  });
}

template <typename S>
std::vector<RowMatrix<S>> attention_probabilities(const Tensor<S>& q, const Tensor<S>& k, Index heads) {
  const Index m = q.dim(0), c = q.dim(1);
  if (heads <= 0 || c % heads) throw ShapeError("attention: token width not divisible by head count");
  const Index d = c / heads;
  const S inv = S(1) / std::sqrt(S(d));
  std::vector<RowMatrix<S>> probs;
  probs.reserve(static_cast<std::size_t>(heads));
  for (Index hd = 0; hd < heads; ++hd) {
    RowMatrix<S> s = (q.matrix().middleCols(hd * d, d) * k.matrix().middleCols(hd * d, d).transpose()) * inv;
    s.colwise() -= s.rowwise().maxCoeff();
    s = s.array().exp();
    s.array().colwise() /= s.array().rowwise().sum();
    probs.push_back(std::move(s));
    (void)m;
  }
  return probs;
}

template <typename S>
Var<S> multi_head_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, Index heads) {
  if (q.value().rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("multi_head_attention: q, k, v must share an [M, C] shape");
  const Index m = q.dim(0), c = q.dim(1);
  std::vector<RowMatrix<S>> probs = attention_probabilities(q.value(), k.value(), heads);
  const Index d = c / heads;
  Tensor<S> out(Shape{m, c});
  for (Index hd = 0; hd < heads; ++hd)
    out.matrix().middleCols(hd * d, d).noalias() = probs[static_cast<std::size_t>(hd)] * v.value().matrix().middleCols(hd * d, d);
  return make_op<S>(std::move(out), {q, k, v}, [m, c, d, heads, probs = std::move(probs)](Node<S>& self) {
    const S inv = S(1) / std::sqrt(S(d));
    const auto g = self.grad.matrix();
    const auto qm = self.inputs[0]->value.matrix();
    const auto km = self.inputs[1]->value.matrix();
    const auto vm = self.inputs[2]->value.matrix();
    for (Index hd = 0; hd < heads; ++hd) {
      const RowMatrix<S>& p = probs[static_cast<std::size_t>(hd)];
      const auto gh = g.middleCols(hd * d, d);
      if (self.input_needs_grad(2)) {
        Eigen::Map<RowMatrix<S>> gv(self.inputs[2]->grad_buffer().data(), m, c);
        gv.middleCols(hd * d, d).noalias() += p.transpose() * gh;
      }
      if (!self.input_needs_grad(0) && !self.input_needs_grad(1)) continue;
      RowMatrix<S> dp = gh * vm.middleCols(hd * d, d).transpose();
      Array1<S> row_dot = (dp.array() * p.array()).rowwise().sum();
      RowMatrix<S> ds = (p.array() * (dp.array().colwise() - row_dot)).matrix() * inv;
      if (self.input_needs_grad(0)) {
        Eigen::Map<RowMatrix<S>> gq(self.inputs[0]->grad_buffer().data(), m, c);
        gq.middleCols(hd * d, d).noalias() += ds * km.middleCols(hd * d, d);
      }
      if (self.input_needs_grad(1)) {
        Eigen::Map<RowMatrix<S>> gk(self.inputs[1]->grad_buffer().data(), m, c);
        gk.middleCols(hd * d, d).noalias() += ds.transpose() * qm.middleCols(hd * d, d);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename S>
Var<S> sum(const Var<S>& x) {
  return make_op<S>(scalar_tensor(x.value().array().sum()), {x},
                    [](Node<S>& self) { self.inputs[0]->grad_buffer() += self.grad[0]; });
}

template <typename S>
Var<S> mean(const Var<S>& x) {
  const S n = S(x.size());
  return make_op<S>(scalar_tensor(x.value().array().sum() / n), {x},
                    [n](Node<S>& self) { self.inputs[0]->grad_buffer() += self.grad[0] / n; });
}

template <typename S>
Var<S> mean_abs_diff(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a, b, "mean_abs_diff");
  const S n = S(a.size());
  const S value = (a.value().array() - b.value().array()).abs().sum() / n;
  return make_op<S>(scalar_tensor(value), {a, b}, [n](Node<S>& self) {
    const Array1<S> sign = (self.inputs[0]->value.array() - self.inputs[1]->value.array()).sign();
    const S g = self.grad[0] / n;
    if (self.input_needs_grad(0)) self.inputs[0]->grad_buffer() += sign * g;
    if (self.input_needs_grad(1)) self.inputs[1]->grad_buffer() -= sign * g;
  });
}

template <typename S>
Var<S> cosine_similarity(const Var<S>& a, const Var<S>& b, S eps) {
  require_same_shape(a, b, "cosine_similarity");
  const S dot = (a.value().array() * b.value().array()).sum();
  const S na = a.value().array().matrix().norm();
  const S nb = b.value().array().matrix().norm();
  const S denom = na * nb + eps;
  return make_op<S>(scalar_tensor(dot / denom), {a, b}, [dot, na, nb, denom](Node<S>& self) {
    const S g = self.grad[0];
    const auto& av = self.inputs[0]->value.array();
    const auto& bv = self.inputs[1]->value.array();
    const S coef = dot / (denom * denom);
    if (self.input_needs_grad(0)) {
      auto& ga = self.inputs[0]->grad_buffer();
      ga += g * bv / denom;
      if (na > 0) ga -= g * coef * nb * av / na;
    }
    if (self.input_needs_grad(1)) {
      auto& gb = self.inputs[1]->grad_buffer();
      gb += g * av / denom;
      if (nb > 0) gb -= g * coef * na * bv / nb;
    }
  });
}

template <typename S>
Var<S> cross_entropy(const Var<S>& logits, Index label) {
  if (logits.value().rank() != 1) throw ShapeError("cross_entropy: logits must be a vector");
  if (label < 0 || label >= logits.size()) throw IndexError("cross_entropy: label out of range");
  const auto& x = logits.value().array();
  const S mx = x.maxCoeff();
  const S lse = mx + std::log((x - mx).exp().sum());
  return make_op<S>(scalar_tensor(lse - x[label]), {logits}, [label, lse](Node<S>& self) {
    Array1<S> p = (self.inputs[0]->value.array() - lse).exp();
    p[label] -= S(1);
    self.inputs[0]->grad_buffer() += p * self.grad[0];
  });
}

#define HFGAN_INSTANTIATE_OPS(S)                                                                  \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                           \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                                           \
  template Var<S> mul<S>(const Var<S>&, const Var<S>&);                                           \
  template Var<S> scale<S>(const Var<S>&, S);                                                     \
  template Var<S> add_scalar<S>(const Var<S>&, S);                                                \
  template Var<S> sum_all<S>(const std::vector<Var<S>>&);                                         \
  template Var<S> add_row_broadcast<S>(const Var<S>&, const Var<S>&);                             \
  template Var<S> scale_channels<S>(const Var<S>&, const Var<S>&);                                \
  template Var<S> silu<S>(const Var<S>&);                                                         \
  template Var<S> leaky_relu<S>(const Var<S>&, S);                                                \
  template Var<S> tanh<S>(const Var<S>&);                                                         \
  template Var<S> sigmoid<S>(const Var<S>&);                                                      \
  template Var<S> gelu<S>(const Var<S>&);                                                         \
  template Var<S> exp<S>(const Var<S>&);                                                          \
  template Var<S> log_sigmoid<S>(const Var<S>&);                                                  \
  template Var<S> reshape<S>(const Var<S>&, Shape);                                               \
  template Var<S> transpose<S>(const Var<S>&);                                                    \
  template Var<S> concat<S>(const std::vector<Var<S>>&);                                          \
  template Var<S> stack<S>(const std::vector<Var<S>>&);                                           \
  template Var<S> select<S>(const Var<S>&, Index);                                                \
  template Var<S> unfold_patches<S>(const Var<S>&, Index);                                        \
  template Var<S> fold_patches<S>(const Var<S>&, Index, Index, Index, Index);                     \
  template Var<S> upsample_nearest2x<S>(const Var<S>&);                                           \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, Index, Index);           \
  template Var<S> conv1d_vector<S>(const Var<S>&, const Var<S>&, const Var<S>&);                  \
  template Var<S> linear<S>(const Var<S>&, const Var<S>&, const Var<S>&);                         \
  template Var<S> instance_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, S);               \
  template Var<S> layer_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, S);                  \
  template Var<S> global_avg_pool<S>(const Var<S>&);                                              \
  template Var<S> softmax<S>(const Var<S>&, int);                                                 \
  template Var<S> multi_head_attention<S>(const Var<S>&, const Var<S>&, const Var<S>&, Index);    \
  template std::vector<RowMatrix<S>> attention_probabilities<S>(const Tensor<S>&, const Tensor<S>&, Index); \
  template Var<S> sum<S>(const Var<S>&);                                                          \
  template Var<S> mean<S>(const Var<S>&);                                                         \
  template Var<S> mean_abs_diff<S>(const Var<S>&, const Var<S>&);                                 \
  template Var<S> cosine_similarity<S>(const Var<S>&, const Var<S>&, S);                          \
  template Var<S> cross_entropy<S>(const Var<S>&, Index);

HFGAN_INSTANTIATE_OPS(float)
HFGAN_INSTANTIATE_OPS(double)

}  // namespace hfgan
