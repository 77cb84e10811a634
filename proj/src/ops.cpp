#include "igpn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

namespace igpn {
namespace {

template <typename T>
using Inputs = std::span<const Tensor<T>* const>;
template <typename T>
using Saved = std::vector<Tensor<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string mismatch(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b);
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  // four rows of c per pass over b
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// eight partial sums so the loop vectorizes; fixed order keeps it reproducible
template <typename T>
T dot(const T* x, const T* y, std::size_t len) {
  T part[8] = {};
  std::size_t j = 0;
  for (; j + 8 <= len; j += 8)
    for (std::size_t l = 0; l < 8; ++l) part[l] += x[j + l] * y[j + l];
  for (; j < len; ++j) part[0] += x[j] * y[j];
  return ((part[0] + part[1]) + (part[2] + part[3])) + ((part[4] + part[5]) + (part[6] + part[7]));
}

template <typename T>
const T* transposed(const T* src, std::size_t rows, std::size_t cols) {
  thread_local std::vector<T> buffer;
  buffer.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) buffer[q * rows + r] = src[r * cols + q];
  return buffer.data();
}

// C(m,n) += op(A) op(B). A is (m,k) or, transposed, stored (k,m); B is (k,n) or stored (n,k).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if (trans_b) {
    gemm(trans_a, false, m, n, k, a, transposed(b, n, k), c);
    return;
  }
  if (!trans_a) {
    gemm_nn(m, n, k, a, b, c);
    return;
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape());
}

template <typename T>
Tensor<T> map_unary(const Tensor<T>& x, auto fn) {
  Tensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  return out;
}

// Splits a rank>=2 shape around axis 1 into (outer, channels, inner).
struct ChannelView {
  std::size_t outer, channels, inner;
};

ChannelView channel_view(const Shape& s, const char* op) {
  require(s.size() >= 2, std::string(op) + ": needs rank >= 2, got " + to_string(s));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
  return strides;
}

// Visits every multi-index of `shape` in row-major order, calling fn(linear, index).
template <typename Fn>
void for_each_index(const Shape& shape, Fn fn) {
  const std::size_t total = element_count(shape);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t lin = 0; lin < total; ++lin) {
    fn(lin, idx);
    for (std::size_t ax = shape.size(); ax-- > 0;) {
      if (++idx[ax] < shape[ax]) break;
      idx[ax] = 0;
    }
  }
}

// Maps each input element to its reduced output slot.
std::vector<std::size_t> reduction_map(const Shape& in, const std::vector<bool>& reduced, Shape& out_shape) {
  out_shape.clear();
  for (std::size_t ax = 0; ax < in.size(); ++ax) {
    if (!reduced[ax]) out_shape.push_back(in[ax]);
  }
  Shape kept_extents = out_shape;
  auto out_strides = row_major_strides(kept_extents);
  std::vector<std::size_t> stride_per_axis(in.size(), 0);
  for (std::size_t ax = 0, k = 0; ax < in.size(); ++ax) {
    if (!reduced[ax]) stride_per_axis[ax] = out_strides[k++];
  }
  std::vector<std::size_t> map(element_count(in));
  for_each_index(in, [&](std::size_t lin, const std::vector<std::size_t>& idx) {
    std::size_t off = 0;
    for (std::size_t ax = 0; ax < idx.size(); ++ax) off += idx[ax] * stride_per_axis[ax];
    map[lin] = off;
  });
  return map;
}

std::vector<bool> axis_mask(const Shape& s, const std::vector<std::size_t>& axes, const char* op) {
  std::vector<bool> mask(s.size(), false);
  for (std::size_t a : axes) {
    require(a < s.size(), std::string(op) + ": axis " + std::to_string(a) + " out of range for " + to_string(s));
    require(!mask[a], std::string(op) + ": repeated axis " + std::to_string(a));
    mask[a] = true;
  }
  return mask;
}

template <typename T>
Var<T> reduce(Var<T> a, std::vector<std::size_t> axes, bool average) {
  const Op op = average ? Op::mean : Op::sum;
  const char* name = average ? "mean" : "sum";
  const Shape in_shape = a.shape();
  const auto mask = axis_mask(in_shape, axes, name);
  Shape out_shape;
  auto map = std::make_shared<std::vector<std::size_t>>(reduction_map(in_shape, mask, out_shape));
  std::size_t count = 1;
  for (std::size_t ax = 0; ax < in_shape.size(); ++ax) {
    if (mask[ax]) count *= in_shape[ax];
  }
  const T factor = average ? T{1} / static_cast<T>(std::max<std::size_t>(count, 1)) : T{1};
  if (average) require(count > 0, "mean over an empty extent");

  auto forward = [map, out_shape, factor](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(out_shape);
    auto src = in[0]->data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[(*map)[i]] += src[i];
    if (factor != T{1}) {
      for (auto& v : dst) v *= factor;
    }
    return out;
  };
  auto backward = [map, factor](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&,
                                std::span<const bool>) {
    Tensor<T> dx(in[0]->shape());
    auto src = g.data();
    auto dst = dx.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[(*map)[i]] * factor;
    return std::vector<Tensor<T>>{std::move(dx)};
  };
  return a.record->apply(op, {a}, forward, backward);
}

template <typename T>
Var<T> elementwise_binary(Op op, Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(), mismatch(std::string(op_name(op)).c_str(), a.shape(), b.shape()));
  auto forward = [op](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(in[0]->shape());
    auto x = in[0]->data();
    auto y = in[1]->data();
    auto z = out.data();
    switch (op) {
      case Op::add:
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
        break;
      case Op::sub:
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
        break;
      default:
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
        break;
    }
    return out;
  };
  auto backward = [op](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&,
                       std::span<const bool> wanted) {
    std::vector<Tensor<T>> grads(2);
    if (op == Op::mul) {
      if (wanted[0]) {
        grads[0] = Tensor<T>(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] = g[i] * (*in[1])[i];
      }
      if (wanted[1]) {
        grads[1] = Tensor<T>(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] = g[i] * (*in[0])[i];
      }
    } else {
      if (wanted[0]) grads[0] = g;
      if (wanted[1]) {
        grads[1] = g;
        if (op == Op::sub) {
          for (auto& v : grads[1].data()) v = -v;
        }
      }
    }
    return grads;
  };
  return a.record->apply(op, {a, b}, forward, backward);
}

// Unary ops whose derivative is a function of the output value.
template <typename T, typename Fwd, typename Deriv>
Var<T> unary_from_output(Op op, Var<T> a, Fwd fwd, Deriv deriv_of_output) {
  auto forward = [fwd](Inputs<T> in, Saved<T>&) { return map_unary(*in[0], fwd); };
  auto backward = [deriv_of_output](const Tensor<T>& g, Inputs<T>, const Tensor<T>& out, const Saved<T>&,
                                    std::span<const bool>) {
    Tensor<T> dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * deriv_of_output(out[i]);
    return std::vector<Tensor<T>>{std::move(dx)};
  };
  return a.record->apply(op, {a}, forward, backward);
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], mismatch("matmul", sa, sb));
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  auto forward = [m, k, n](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(Shape{m, n});
    gemm(false, false, m, n, k, in[0]->data().data(), in[1]->data().data(), out.data().data());
    return out;
  };
  auto backward = [m, k, n](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&,
                            std::span<const bool> wanted) {
    std::vector<Tensor<T>> grads(2);
    if (wanted[0]) {
      grads[0] = Tensor<T>(Shape{m, k});
      gemm(false, true, m, k, n, g.data().data(), in[1]->data().data(), grads[0].data().data());
    }
    if (wanted[1]) {
      grads[1] = Tensor<T>(Shape{k, n});
      gemm(true, false, k, n, m, in[0]->data().data(), g.data().data(), grads[1].data().data());
    }
    return grads;
  };
  return a.record->apply(Op::matmul, {a, b}, forward, backward, static_cast<std::uint64_t>(m) * k * n);
}

template <typename T>
Var<T> batched_matmul(Var<T> a, Var<T> b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool a_shared = sa.size() == 2;
  const bool b_shared = sb.size() == 2;
  require((sa.size() == 2 || sa.size() == 3) && (sb.size() == 2 || sb.size() == 3) && !(a_shared && b_shared),
          mismatch("batched_matmul", sa, sb));
  const std::size_t batch = a_shared ? sb[0] : sa[0];
  if (!a_shared && !b_shared) require(sa[0] == sb[0], mismatch("batched_matmul", sa, sb));
  const std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  require(k == kb, mismatch("batched_matmul", sa, sb));

  auto forward = [=](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(Shape{batch, m, n});
    const T* pa = in[0]->data().data();
    const T* pb = in[1]->data().data();
    T* pc = out.data().data();
    for (std::size_t i = 0; i < batch; ++i) {
      gemm(false, false, m, n, k, a_shared ? pa : pa + i * m * k, b_shared ? pb : pb + i * k * n, pc + i * m * n);
    }
    return out;
  };
  auto backward = [=](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&,
                      std::span<const bool> wanted) {
    std::vector<Tensor<T>> grads(2);
    const T* pa = in[0]->data().data();
    const T* pb = in[1]->data().data();
    const T* pg = g.data().data();
    if (wanted[0]) {
      grads[0] = Tensor<T>(in[0]->shape());
      T* da = grads[0].data().data();
      for (std::size_t i = 0; i < batch; ++i) {
        gemm(false, true, m, k, n, pg + i * m * n, b_shared ? pb : pb + i * k * n, a_shared ? da : da + i * m * k);
      }
    }
    if (wanted[1]) {
      grads[1] = Tensor<T>(in[1]->shape());
      T* db = grads[1].data().data();
      for (std::size_t i = 0; i < batch; ++i) {
        gemm(true, false, k, n, m, a_shared ? pa : pa + i * m * k, pg + i * m * n, b_shared ? db : db + i * k * n);
      }
    }
    return grads;
  };
  return a.record->apply(Op::batched_matmul, {a, b}, forward, backward,
                         static_cast<std::uint64_t>(batch) * m * k * n);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return elementwise_binary(Op::add, a, b);
}
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return elementwise_binary(Op::sub, a, b);
}
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return elementwise_binary(Op::mul, a, b);
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  auto forward = [factor](Inputs<T> in, Saved<T>&) { return map_unary(*in[0], [factor](T v) { return v * factor; }); };
  auto backward = [factor](const Tensor<T>& g, Inputs<T>, const Tensor<T>&, const Saved<T>&, std::span<const bool>) {
    return std::vector<Tensor<T>>{map_unary(g, [factor](T v) { return v * factor; })};
  };
  return a.record->apply(Op::scale, {a}, forward, backward);
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary_from_output(
      Op::tanh, a, [](T v) { return std::tanh(v); }, [](T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary_from_output(
      Op::sigmoid, a,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary_from_output(
      Op::relu, a, [](T v) { return v > T{0} ? v : T{0}; }, [](T y) { return y > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> softmax(Var<T> a) {
  require(a.shape().size() >= 1 && a.shape().back() > 0, "softmax: needs a non-empty last axis");
  const std::size_t width = a.shape().back();
  auto forward = [width](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(in[0]->shape());
    const T* x = in[0]->data().data();
    T* y = out.data().data();
    for (std::size_t r = 0; r < out.size() / width; ++r) {
      const T* xr = x + r * width;
      T* yr = y + r * width;
      const T mx = *std::max_element(xr, xr + width);
      T total{0};
      for (std::size_t j = 0; j < width; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        total += yr[j];
      }
      for (std::size_t j = 0; j < width; ++j) yr[j] /= total;
    }
    return out;
  };
  auto backward = [width](const Tensor<T>& g, Inputs<T>, const Tensor<T>& out, const Saved<T>&,
                          std::span<const bool>) {
    Tensor<T> dx(g.shape());
    for (std::size_t r = 0; r < g.size() / width; ++r) {
      T dot{0};
      for (std::size_t j = 0; j < width; ++j) dot += g[r * width + j] * out[r * width + j];
      for (std::size_t j = 0; j < width; ++j) {
        dx[r * width + j] = out[r * width + j] * (g[r * width + j] - dot);
      }
    }
    return std::vector<Tensor<T>>{std::move(dx)};
  };
  return a.record->apply(Op::softmax, {a}, forward, backward);
}

template <typename T>
Var<T> sum(Var<T> a, std::vector<std::size_t> axes) {
  return reduce(a, std::move(axes), false);
}

template <typename T>
Var<T> mean(Var<T> a, std::vector<std::size_t> axes) {
  return reduce(a, std::move(axes), true);
}

template <typename T>
Var<T> sum_all(Var<T> a) {
  std::vector<std::size_t> axes(a.shape().size());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return reduce(a, std::move(axes), false);
}

template <typename T>
Var<T> temporal_conv(Var<T> x, Var<T> weight, std::size_t stride) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  require(sx.size() == 4, "temporal_conv: input must be (B,C,T,N), got " + to_string(sx));
  require(sw.size() == 3 && sw[1] == sx[1], mismatch("temporal_conv", sx, sw));
  require(sw[2] % 2 == 1, "temporal_conv: kernel size must be odd");
  require(stride >= 1, "temporal_conv: stride must be >= 1");
  const std::size_t batch = sx[0], cin = sx[1], frames = sx[2], nodes = sx[3];
  const std::size_t cout = sw[0], kernel = sw[2];
  const std::size_t pad = (kernel - 1) / 2;
  const std::size_t out_frames = (frames + stride - 1) / stride;

  // Output frame range [lo, hi) for which input frame to*stride + d - pad is valid.
  auto valid_range = [=](std::size_t d) {
    std::size_t lo = 0;
    while (lo < out_frames && lo * stride + d < pad) ++lo;
    std::size_t hi = lo;
    while (hi < out_frames && hi * stride + d - pad < frames) ++hi;
    return std::pair{lo, hi};
  };

  auto forward = [=](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(Shape{batch, cout, out_frames, nodes});
    const T* px = in[0]->data().data();
    const T* pw = in[1]->data().data();
    T* py = out.data().data();
    for (std::size_t d = 0; d < kernel; ++d) {
      auto [lo, hi] = valid_range(d);
      if (lo >= hi) continue;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
          T* yrow = py + ((b * cout + co) * out_frames) * nodes;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T w = pw[(co * cin + ci) * kernel + d];
            if (w == T{0}) continue;
            const T* xrow = px + ((b * cin + ci) * frames) * nodes;
            if (stride == 1) {
              const T* src = xrow + (lo + d - pad) * nodes;
              T* dst = yrow + lo * nodes;
              const std::size_t len = (hi - lo) * nodes;
              for (std::size_t j = 0; j < len; ++j) dst[j] += w * src[j];
            } else {
              for (std::size_t to = lo; to < hi; ++to) {
                const T* src = xrow + (to * stride + d - pad) * nodes;
                T* dst = yrow + to * nodes;
                for (std::size_t n = 0; n < nodes; ++n) dst[n] += w * src[n];
              }
            }
          }
        }
      }
    }
    return out;
  };
  auto backward = [=](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&,
                      std::span<const bool> wanted) {
    std::vector<Tensor<T>> grads(2);
    const T* px = in[0]->data().data();
    const T* pw = in[1]->data().data();
    const T* pg = g.data().data();
    if (wanted[0]) grads[0] = Tensor<T>(in[0]->shape());
    if (wanted[1]) grads[1] = Tensor<T>(in[1]->shape());
    for (std::size_t d = 0; d < kernel; ++d) {
      auto [lo, hi] = valid_range(d);
      if (lo >= hi) continue;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t co = 0; co < cout; ++co) {
          const T* grow = pg + ((b * cout + co) * out_frames) * nodes;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const std::size_t widx = (co * cin + ci) * kernel + d;
            const std::size_t xoff = ((b * cin + ci) * frames) * nodes;
            if (wanted[0]) {
              const T w = pw[widx];
              T* dxrow = grads[0].data().data() + xoff;
              if (stride == 1) {
                T* dst = dxrow + (lo + d - pad) * nodes;
                const T* src = grow + lo * nodes;
                const std::size_t len = (hi - lo) * nodes;
                for (std::size_t j = 0; j < len; ++j) dst[j] += w * src[j];
              } else {
                for (std::size_t to = lo; to < hi; ++to) {
                  T* dst = dxrow + (to * stride + d - pad) * nodes;
                  const T* src = grow + to * nodes;
                  for (std::size_t n = 0; n < nodes; ++n) dst[n] += w * src[n];
                }
              }
            }
            if (wanted[1]) {
              const T* xrow = px + xoff;
              T acc{0};
              if (stride == 1) {
                acc = dot(xrow + (lo + d - pad) * nodes, grow + lo * nodes, (hi - lo) * nodes);
              } else {
                for (std::size_t to = lo; to < hi; ++to)
                  acc += dot(xrow + (to * stride + d - pad) * nodes, grow + to * nodes, nodes);
              }
              grads[1][widx] += acc;
            }
          }
        }
      }
    }
    return grads;
  };
  const std::uint64_t macs = static_cast<std::uint64_t>(batch) * cin * cout * kernel * out_frames * nodes;
  return x.record->apply(Op::temporal_conv, {x, weight}, forward, backward, macs);
}

template <typename T>
Var<T> frame_pair_mean(Var<T> x) {
  const auto& sx = x.shape();
  require(sx.size() == 4 && sx[2] >= 1, "frame_pair_mean: input must be (B,C,T,N) with T >= 1, got " + to_string(sx));
  const std::size_t rows = sx[0] * sx[1], frames = sx[2], nodes = sx[3];
  const std::size_t out_frames = (frames + 1) / 2;
  auto forward = [=](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(Shape{sx[0], sx[1], out_frames, nodes});
    const T* px = in[0]->data().data();
    T* py = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < out_frames; ++t) {
        const T* f0 = px + (r * frames + 2 * t) * nodes;
        T* dst = py + (r * out_frames + t) * nodes;
        if (2 * t + 1 < frames) {
          const T* f1 = f0 + nodes;
          for (std::size_t n = 0; n < nodes; ++n) dst[n] = (f0[n] + f1[n]) / T{2};
        } else {
          for (std::size_t n = 0; n < nodes; ++n) dst[n] = f0[n];
        }
      }
    }
    return out;
  };
  auto backward = [=](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&, std::span<const bool>) {
    Tensor<T> dx(in[0]->shape());
    const T* pg = g.data().data();
    T* pd = dx.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < out_frames; ++t) {
        const T* src = pg + (r * out_frames + t) * nodes;
        T* d0 = pd + (r * frames + 2 * t) * nodes;
        if (2 * t + 1 < frames) {
          T* d1 = d0 + nodes;
          for (std::size_t n = 0; n < nodes; ++n) {
            d0[n] = src[n] / T{2};
            d1[n] = src[n] / T{2};
          }
        } else {
          for (std::size_t n = 0; n < nodes; ++n) d0[n] = src[n];
        }
      }
    }
    return std::vector<Tensor<T>>{std::move(dx)};
  };
  return x.record->apply(Op::frame_pair_mean, {x}, forward, backward);
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  require(sa.size() >= 2 && sa.size() == sb.size(), mismatch("concat_channels", sa, sb));
  for (std::size_t ax = 0; ax < sa.size(); ++ax) {
    if (ax != 1) require(sa[ax] == sb[ax], mismatch("concat_channels", sa, sb));
  }
  const auto va = channel_view(sa, "concat_channels");
  const std::size_t ca = sa[1], cb = sb[1], inner = va.inner, outer = va.outer;
  Shape out_shape = sa;
  out_shape[1] = ca + cb;
  auto forward = [=](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(out_shape);
    const T* pa = in[0]->data().data();
    const T* pb = in[1]->data().data();
    T* py = out.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pa + o * ca * inner, ca * inner, py + o * (ca + cb) * inner);
      std::copy_n(pb + o * cb * inner, cb * inner, py + (o * (ca + cb) + ca) * inner);
    }
    return out;
  };
  auto backward = [=](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&,
                      std::span<const bool> wanted) {
    std::vector<Tensor<T>> grads(2);
    const T* pg = g.data().data();
    if (wanted[0]) grads[0] = Tensor<T>(in[0]->shape());
    if (wanted[1]) grads[1] = Tensor<T>(in[1]->shape());
    for (std::size_t o = 0; o < outer; ++o) {
      if (wanted[0]) std::copy_n(pg + o * (ca + cb) * inner, ca * inner, grads[0].data().data() + o * ca * inner);
      if (wanted[1]) {
        std::copy_n(pg + (o * (ca + cb) + ca) * inner, cb * inner, grads[1].data().data() + o * cb * inner);
      }
    }
    return grads;
  };
  return a.record->apply(Op::concat_channels, {a, b}, forward, backward);
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  require(element_count(shape) == a.value().size(), "reshape: cannot view " + to_string(a.shape()) + " as " +
                                                        to_string(shape));
  auto forward = [shape](Inputs<T> in, Saved<T>&) { return in[0]->reshaped(shape); };
  auto backward = [](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&, std::span<const bool>) {
    return std::vector<Tensor<T>>{g.reshaped(in[0]->shape())};
  };
  return a.record->apply(Op::reshape, {a}, forward, backward);
}

namespace {

template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in_shape = x.shape();
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[axes[i]];
  const auto in_strides = row_major_strides(in_shape);
  std::vector<std::size_t> gather(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) gather[i] = in_strides[axes[i]];
  Tensor<T> out(out_shape);
  const T* src = x.data().data();
  T* dst = out.data().data();
  for_each_index(out_shape, [&](std::size_t lin, const std::vector<std::size_t>& idx) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) off += idx[i] * gather[i];
    dst[lin] = src[off];
  });
  return out;
}

}  // namespace

template <typename T>
Var<T> permute(Var<T> a, std::vector<std::size_t> axes) {
  const auto& s = a.shape();
  require(axes.size() == s.size(), "permute: axis list does not match rank of " + to_string(s));
  std::vector<bool> seen(s.size(), false);
  for (std::size_t ax : axes) {
    require(ax < s.size() && !seen[ax], "permute: axes must be a permutation");
    seen[ax] = true;
  }
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
  auto forward = [axes](Inputs<T> in, Saved<T>&) { return permute_tensor(*in[0], axes); };
  auto backward = [inverse](const Tensor<T>& g, Inputs<T>, const Tensor<T>&, const Saved<T>&, std::span<const bool>) {
    return std::vector<Tensor<T>>{permute_tensor(g, inverse)};
  };
  return a.record->apply(Op::permute, {a}, forward, backward);
}

template <typename T>
Var<T> expand(Var<T> a, std::size_t axis, std::size_t count) {
  const auto& s = a.shape();
  require(axis < s.size() && s[axis] == 1, "expand: axis " + std::to_string(axis) + " of " + to_string(s) +
                                               " must have extent 1");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = count;
  auto forward = [=](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(out_shape);
    const T* src = in[0]->data().data();
    T* dst = out.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t c = 0; c < count; ++c) std::copy_n(src + o * inner, inner, dst + (o * count + c) * inner);
    }
    return out;
  };
  auto backward = [=](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&, std::span<const bool>) {
    Tensor<T> dx(in[0]->shape());
    const T* src = g.data().data();
    T* dst = dx.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t c = 0; c < count; ++c) {
        const T* row = src + (o * count + c) * inner;
        for (std::size_t j = 0; j < inner; ++j) dst[o * inner + j] += row[j];
      }
    }
    return std::vector<Tensor<T>>{std::move(dx)};
  };
  return a.record->apply(Op::expand, {a}, forward, backward);
}

template <typename T>
Var<T> channel_affine(Var<T> x, Var<T> gamma, Var<T> beta) {
  const auto v = channel_view(x.shape(), "channel_affine");
  require(gamma.shape() == Shape{v.channels} && beta.shape() == Shape{v.channels},
          "channel_affine: gamma/beta must have shape (" + std::to_string(v.channels) + ")");
  auto forward = [v](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(in[0]->shape());
    const T* px = in[0]->data().data();
    const T* pg = in[1]->data().data();
    const T* pb = in[2]->data().data();
    T* py = out.data().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t c = 0; c < v.channels; ++c) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        for (std::size_t j = 0; j < v.inner; ++j) py[base + j] = px[base + j] * pg[c] + pb[c];
      }
    }
    return out;
  };
  auto backward = [v](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&,
                      std::span<const bool> wanted) {
    std::vector<Tensor<T>> grads(3);
    const T* px = in[0]->data().data();
    const T* pgam = in[1]->data().data();
    const T* pg = g.data().data();
    if (wanted[0]) grads[0] = Tensor<T>(in[0]->shape());
    if (wanted[1]) grads[1] = Tensor<T>(in[1]->shape());
    if (wanted[2]) grads[2] = Tensor<T>(in[2]->shape());
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t c = 0; c < v.channels; ++c) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        T dg{0}, db{0};
        for (std::size_t j = 0; j < v.inner; ++j) {
          if (wanted[0]) grads[0][base + j] = pg[base + j] * pgam[c];
          dg += pg[base + j] * px[base + j];
          db += pg[base + j];
        }
        if (wanted[1]) grads[1][c] += dg;
        if (wanted[2]) grads[2][c] += db;
      }
    }
    return grads;
  };
  return x.record->apply(Op::channel_affine, {x, gamma, beta}, forward, backward);
}

template <typename T>
Var<T> channel_bias(Var<T> x, Var<T> beta) {
  const auto v = channel_view(x.shape(), "channel_bias");
  require(beta.shape() == Shape{v.channels}, "channel_bias: beta must have shape (" + std::to_string(v.channels) + ")");
  auto forward = [v](Inputs<T> in, Saved<T>&) {
    Tensor<T> out(in[0]->shape());
    const T* px = in[0]->data().data();
    const T* pb = in[1]->data().data();
    T* py = out.data().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t c = 0; c < v.channels; ++c) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        for (std::size_t j = 0; j < v.inner; ++j) py[base + j] = px[base + j] + pb[c];
      }
    }
    return out;
  };
  auto backward = [v](const Tensor<T>& g, Inputs<T> in, const Tensor<T>&, const Saved<T>&,
                      std::span<const bool> wanted) {
    std::vector<Tensor<T>> grads(2);
    if (wanted[0]) grads[0] = g;
    if (wanted[1]) {
      grads[1] = Tensor<T>(in[1]->shape());
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t c = 0; c < v.channels; ++c) {
          const std::size_t base = (o * v.channels + c) * v.inner;
          T acc{0};
          for (std::size_t j = 0; j < v.inner; ++j) acc += g[base + j];
          grads[1][c] += acc;
        }
      }
    }
    return grads;
  };
  return x.record->apply(Op::channel_bias, {x, beta}, forward, backward);
}

template <typename T>
Var<T> channel_standardize(Var<T> x, T eps) {
  const auto v = channel_view(x.shape(), "channel_standardize");
  const std::size_t per_channel = v.outer * v.inner;
  require(per_channel > 0, "channel_standardize: empty batch");
  auto forward = [v, eps, per_channel](Inputs<T> in, Saved<T>& saved) {
    Tensor<T> out(in[0]->shape());
    Tensor<T> inv_std(Shape{v.channels});
    const T* px = in[0]->data().data();
    T* py = out.data().data();
    for (std::size_t c = 0; c < v.channels; ++c) {
      T mu{0};
      for (std::size_t o = 0; o < v.outer; ++o) {
        const T* row = px + (o * v.channels + c) * v.inner;
        for (std::size_t j = 0; j < v.inner; ++j) mu += row[j];
      }
      mu /= static_cast<T>(per_channel);
      T var{0};
      for (std::size_t o = 0; o < v.outer; ++o) {
        const T* row = px + (o * v.channels + c) * v.inner;
        for (std::size_t j = 0; j < v.inner; ++j) var += (row[j] - mu) * (row[j] - mu);
      }
      var /= static_cast<T>(per_channel);
      const T is = T{1} / std::sqrt(var + eps);
      inv_std[c] = is;
      for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        for (std::size_t j = 0; j < v.inner; ++j) py[base + j] = (px[base + j] - mu) * is;
      }
    }
    saved.push_back(std::move(inv_std));
    return out;
  };
  auto backward = [v, per_channel](const Tensor<T>& g, Inputs<T>, const Tensor<T>& out, const Saved<T>& saved,
                                   std::span<const bool>) {
    Tensor<T> dx(g.shape());
    const Tensor<T>& inv_std = saved.at(0);
    const T count = static_cast<T>(per_channel);
    for (std::size_t c = 0; c < v.channels; ++c) {
      T sum_g{0}, sum_gy{0};
      for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        for (std::size_t j = 0; j < v.inner; ++j) {
          sum_g += g[base + j];
          sum_gy += g[base + j] * out[base + j];
        }
      }
      const T k = inv_std[c] / count;
      for (std::size_t o = 0; o < v.outer; ++o) {
        const std::size_t base = (o * v.channels + c) * v.inner;
        for (std::size_t j = 0; j < v.inner; ++j) {
          dx[base + j] = k * (count * g[base + j] - sum_g - out[base + j] * sum_gy);
        }
      }
    }
    return std::vector<Tensor<T>>{std::move(dx)};
  };
  return x.record->apply(Op::channel_standardize, {x}, forward, backward);
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels) {
  const auto& s = logits.shape();
  require(s.size() == 2, "cross_entropy: logits must be (B,K), got " + to_string(s));
  const std::size_t batch = s[0], classes = s[1];
  require(labels.size() == batch, "cross_entropy: expected " + std::to_string(batch) + " labels");
  require(batch > 0 && classes > 0, "cross_entropy: empty logits");
  for (std::size_t l : labels) {
    if (l >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0," +
                              std::to_string(classes) + ")");
    }
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  auto forward = [=](Inputs<T> in, Saved<T>& saved) {
    Tensor<T> probs(s);
    const T* z = in[0]->data().data();
    T total{0};
    for (std::size_t b = 0; b < batch; ++b) {
      const T* zr = z + b * classes;
      T* pr = probs.data().data() + b * classes;
      const T mx = *std::max_element(zr, zr + classes);
      T denom{0};
      for (std::size_t k = 0; k < classes; ++k) {
        pr[k] = std::exp(zr[k] - mx);
        denom += pr[k];
      }
      for (std::size_t k = 0; k < classes; ++k) pr[k] /= denom;
      total += std::log(denom) + mx - zr[lab[b]];
    }
    saved.push_back(std::move(probs));
    return Tensor<T>::scalar(total / static_cast<T>(batch));
  };
  auto backward = [=](const Tensor<T>& g, Inputs<T>, const Tensor<T>&, const Saved<T>& saved, std::span<const bool>) {
    Tensor<T> dz = saved.at(0);
    const T factor = g.item() / static_cast<T>(batch);
    for (std::size_t b = 0; b < batch; ++b) dz[b * classes + lab[b]] -= T{1};
    for (auto& v : dz.data()) v *= factor;
    return std::vector<Tensor<T>>{std::move(dz)};
  };
  return logits.record->apply(Op::cross_entropy, {logits}, forward, backward);
}

#define IGPN_INSTANTIATE_OPS(T)                                                 \
  template Var<T> matmul(Var<T>, Var<T>);                                       \
  template Var<T> batched_matmul(Var<T>, Var<T>);                               \
  template Var<T> add(Var<T>, Var<T>);                                          \
  template Var<T> sub(Var<T>, Var<T>);                                          \
  template Var<T> mul(Var<T>, Var<T>);                                          \
  template Var<T> scale(Var<T>, T);                                             \
  template Var<T> tanh(Var<T>);                                                 \
  template Var<T> sigmoid(Var<T>);                                              \
  template Var<T> relu(Var<T>);                                                 \
  template Var<T> softmax(Var<T>);                                              \
  template Var<T> sum(Var<T>, std::vector<std::size_t>);                        \
  template Var<T> mean(Var<T>, std::vector<std::size_t>);                       \
  template Var<T> sum_all(Var<T>);                                              \
  template Var<T> temporal_conv(Var<T>, Var<T>, std::size_t);                   \
  template Var<T> frame_pair_mean(Var<T>);                                      \
  template Var<T> concat_channels(Var<T>, Var<T>);                              \
  template Var<T> reshape(Var<T>, Shape);                                       \
  template Var<T> permute(Var<T>, std::vector<std::size_t>);                    \
  template Var<T> expand(Var<T>, std::size_t, std::size_t);                     \
  template Var<T> channel_affine(Var<T>, Var<T>, Var<T>);                       \
  template Var<T> channel_bias(Var<T>, Var<T>);                                 \
  template Var<T> channel_standardize(Var<T>, T);                               \
  template Var<T> cross_entropy(Var<T>, std::span<const std::size_t>);

IGPN_INSTANTIATE_OPS(float)
IGPN_INSTANTIATE_OPS(double)

}  // namespace igpn
