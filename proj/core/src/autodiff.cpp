#include "textdeform/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <Eigen/Core>

namespace textdeform::ad {

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + ")";
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
ConstMapMat<T> as_mat(const Tensor<T>& t, int rows, int cols) {
  return ConstMapMat<T>(t.ptr(), rows, cols);
}
template <class T>
MapMat<T> as_mat(Tensor<T>& t, int rows, int cols) {
  return MapMat<T>(t.ptr(), rows, cols);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

struct ConvGeom {
  int c, h, w, k, ho, wo;
  Conv2dSpec spec;
  int patch() const { return c * k * k; }
  int pixels() const { return ho * wo; }
};

// cols: (C*k*k, Ho*Wo)
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const int s = g.spec.stride, p = g.spec.pad, d = g.spec.dilation;
  for (int c = 0; c < g.c; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols + (static_cast<std::size_t>((c * g.k + ky) * g.k + kx)) * g.pixels();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * s - p + ky * d;
          T* out = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* in = x + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * s - p + kx * d;
            out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  const int s = g.spec.stride, p = g.spec.pad, d = g.spec.dilation;
  for (int c = 0; c < g.c; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>((c * g.k + ky) * g.k + kx)) * g.pixels();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * s - p + ky * d;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.wo;
          T* out = dx + (static_cast<std::size_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * s - p + kx * d;
            if (ix >= 0 && ix < g.w) out[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class T>
bool is_pointwise(const ConvGeom& g) {
  return g.k == 1 && g.spec.stride == 1 && g.spec.pad == 0;
}

}  // namespace

template <class T>
Var<T> Ops<T>::conv2d(const V& x, const V& w, const V& b, Conv2dSpec spec) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 3 && ws.size() == 4 && ws[1] == xs[0] && ws[2] == ws[3],
          "conv2d: bad shapes x" + shape_string(xs) + " w" + shape_string(ws));
  ConvGeom g{xs[0], xs[1], xs[2], ws[2], 0, 0, spec};
  const int span = spec.dilation * (g.k - 1) + 1;
  g.ho = (g.h + 2 * spec.pad - span) / spec.stride + 1;
  g.wo = (g.w + 2 * spec.pad - span) / spec.stride + 1;
  require(g.ho > 0 && g.wo > 0, "conv2d: empty output");
  const int out_c = ws[0];
  if (b.valid()) require(b.value().size() == static_cast<std::size_t>(out_c), "conv2d: bias size");

  Tensor<T> y({out_c, g.ho, g.wo});
  auto ym = as_mat(y, out_c, g.pixels());
  auto wm = as_mat(w.value(), out_c, g.patch());
  if (is_pointwise<T>(g)) {
    ym.noalias() = wm * as_mat(x.value(), g.c, g.pixels());
  } else {
    Tensor<T> cols({g.patch(), g.pixels()});
    im2col(x.value().ptr(), g, cols.ptr());
    ym.noalias() = wm * as_mat(cols, g.patch(), g.pixels());
  }
  if (b.valid()) {
    const T* bp = b.value().ptr();
    for (int o = 0; o < out_c; ++o) ym.row(o).array() += bp[o];
  }

  Tape<T>* tape = x.tape();
  const int xi = x.id(), wi = w.id(), bi = b.valid() ? b.id() : -1;
  const int yi_holder = static_cast<int>(tape->size());
  return tape->record(std::move(y), {x, w, b}, [tape, xi, wi, bi, yi_holder, g, out_c]() {
    const auto dy = as_mat(tape->grad(yi_holder), out_c, g.pixels());
    const bool pointwise = is_pointwise<T>(g);
    Tensor<T> cols;
    if (!pointwise && tape->requires_grad(wi)) {
      cols = Tensor<T>({g.patch(), g.pixels()});
      im2col(tape->value(xi).ptr(), g, cols.ptr());
    }
    if (tape->requires_grad(wi)) {
      auto dw = as_mat(tape->grad(wi), out_c, g.patch());
      if (pointwise) {
        dw.noalias() += dy * as_mat(tape->value(xi), g.c, g.pixels()).transpose();
      } else {
        dw.noalias() += dy * as_mat(cols, g.patch(), g.pixels()).transpose();
      }
    }
    if (bi >= 0 && tape->requires_grad(bi)) {
      T* db = tape->grad(bi).ptr();
      // Plain loops: Eigen's vectorised sum order depends on buffer alignment.
      for (int o = 0; o < out_c; ++o) {
        T acc = 0;
        for (int k = 0; k < dy.cols(); ++k) acc += dy(o, k);
        db[o] += acc;
      }
    }
    if (tape->requires_grad(xi)) {
      const auto wm = as_mat(tape->value(wi), out_c, g.patch());
      if (pointwise) {
        as_mat(tape->grad(xi), g.c, g.pixels()).noalias() += wm.transpose() * dy;
      } else {
        Tensor<T> dcols({g.patch(), g.pixels()});
        as_mat(dcols, g.patch(), g.pixels()).noalias() = wm.transpose() * dy;
        col2im(dcols.ptr(), g, tape->grad(xi).ptr());
      }
    }
  });
}

namespace {

template <class T, class F, class G>
Var<T> unary(const Var<T>& x, F forward, G derivative) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = forward(xv[k]);
  Tape<T>* tape = x.tape();
  const int xi = x.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {x}, [tape, xi, yi, derivative]() {
    const auto& yv = tape->value(yi);
    const auto& xv = tape->value(xi);
    const auto& dy = tape->grad(yi);
    auto& dx = tape->grad(xi);
    for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += dy[k] * derivative(xv[k], yv[k]);
  });
}

}  // namespace

template <class T>
Var<T> Ops<T>::relu(const V& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T xv, T) { return xv > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> Ops<T>::sigmoid(const V& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T yv) { return yv * (T(1) - yv); });
}

template <class T>
Var<T> Ops<T>::tanh(const V& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T yv) { return T(1) - yv * yv; });
}

template <class T>
Var<T> Ops<T>::clamp(const V& x, T lo, T hi) {
  return unary(
      x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <class T>
Var<T> Ops<T>::upsample_nearest(const V& x, int f) {
  const auto& s = x.shape();
  require(s.size() == 3 && f >= 1, "upsample_nearest: expects (C, H, W)");
  const int c = s[0], h = s[1], w = s[2];
  Tensor<T> y({c, h * f, w * f});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int yy = 0; yy < h * f; ++yy)
      for (int xx = 0; xx < w * f; ++xx)
        y[(static_cast<std::size_t>(ch) * h * f + yy) * w * f + xx] =
            xv[(static_cast<std::size_t>(ch) * h + yy / f) * w + xx / f];
  Tape<T>* tape = x.tape();
  const int xi = x.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {x}, [tape, xi, yi, c, h, w, f]() {
    const auto& dy = tape->grad(yi);
    auto& dx = tape->grad(xi);
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < h * f; ++yy)
        for (int xx = 0; xx < w * f; ++xx)
          dx[(static_cast<std::size_t>(ch) * h + yy / f) * w + xx / f] +=
              dy[(static_cast<std::size_t>(ch) * h * f + yy) * w * f + xx];
  });
}

namespace {

std::pair<std::size_t, std::size_t> outer_inner(const std::vector<int>& s, int axis) {
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

}  // namespace

template <class T>
Var<T> Ops<T>::concat(const std::vector<V>& xs, int axis) {
  require(!xs.empty(), "concat: no inputs");
  std::vector<int> shape = xs[0].shape();
  require(axis >= 0 && axis < static_cast<int>(shape.size()), "concat: bad axis");
  int total = 0;
  std::vector<int> widths;
  for (const V& v : xs) {
    const auto& s = v.shape();
    require(s.size() == shape.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis) require(s[i] == shape[i], "concat: shape mismatch " + shape_string(s));
    widths.push_back(s[axis]);
    total += s[axis];
  }
  shape[axis] = total;
  const auto [outer, inner] = outer_inner(shape, axis);
  Tensor<T> y(shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& xv = xs[k].value();
    const std::size_t chunk = static_cast<std::size_t>(widths[k]) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(xv.ptr() + o * chunk, chunk, y.ptr() + o * total * inner + offset);
    offset += chunk;
  }
  Tape<T>* tape = xs[0].tape();
  std::vector<int> ids;
  for (const V& v : xs) ids.push_back(v.id());
  const int yi = static_cast<int>(tape->size());
  const std::size_t outer_c = outer, inner_c = inner;
  return tape->record(std::move(y), xs, [tape, ids, widths, yi, outer_c, inner_c, total]() {
    const auto& dy = tape->grad(yi);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t chunk = static_cast<std::size_t>(widths[k]) * inner_c;
      if (tape->requires_grad(ids[k])) {
        auto& dx = tape->grad(ids[k]);
        for (std::size_t o = 0; o < outer_c; ++o)
          for (std::size_t j = 0; j < chunk; ++j) dx[o * chunk + j] += dy[o * total * inner_c + offset + j];
      }
      offset += chunk;
    }
  });
}

template <class T>
Var<T> Ops<T>::slice(const V& x, int axis, int start, int count) {
  std::vector<int> shape = x.shape();
  require(axis >= 0 && axis < static_cast<int>(shape.size()), "slice: bad axis");
  const int full = shape[axis];
  require(start >= 0 && count >= 0 && start + count <= full, "slice: out of range");
  shape[axis] = count;
  const auto [outer, inner] = outer_inner(shape, axis);
  Tensor<T> y(shape);
  const auto& xv = x.value();
  const std::size_t chunk = static_cast<std::size_t>(count) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.ptr() + o * full * inner + static_cast<std::size_t>(start) * inner, chunk,
                y.ptr() + o * chunk);
  Tape<T>* tape = x.tape();
  const int xi = x.id();
  const int yi = static_cast<int>(tape->size());
  const std::size_t outer_c = outer, inner_c = inner;
  return tape->record(std::move(y), {x}, [tape, xi, yi, outer_c, inner_c, full, start, chunk]() {
    const auto& dy = tape->grad(yi);
    auto& dx = tape->grad(xi);
    for (std::size_t o = 0; o < outer_c; ++o)
      for (std::size_t j = 0; j < chunk; ++j)
        dx[o * full * inner_c + static_cast<std::size_t>(start) * inner_c + j] += dy[o * chunk + j];
  });
}

template <class T>
Var<T> Ops<T>::matmul(const V& a, const V& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require(as.size() == 2 && bs.size() == 2 && as[1] == bs[0],
          "matmul: shapes " + shape_string(as) + " x " + shape_string(bs));
  const int n = as[0], k = as[1], m = bs[1];
  Tensor<T> y({n, m});
  as_mat(y, n, m).noalias() = as_mat(a.value(), n, k) * as_mat(b.value(), k, m);
  Tape<T>* tape = a.tape();
  const int ai = a.id(), bi = b.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {a, b}, [tape, ai, bi, yi, n, k, m]() {
    const auto dy = as_mat(tape->grad(yi), n, m);
    if (tape->requires_grad(ai))
      as_mat(tape->grad(ai), n, k).noalias() += dy * as_mat(tape->value(bi), k, m).transpose();
    if (tape->requires_grad(bi))
      as_mat(tape->grad(bi), k, m).noalias() += as_mat(tape->value(ai), n, k).transpose() * dy;
  });
}

template <class T>
Var<T> Ops<T>::add_bias(const V& a, const V& b) {
  const auto& as = a.shape();
  require(as.size() == 2 && b.value().size() == static_cast<std::size_t>(as[1]), "add_bias: shape mismatch");
  const int n = as[0], m = as[1];
  Tensor<T> y = a.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) y[static_cast<std::size_t>(i) * m + j] += b.value()[j];
  Tape<T>* tape = a.tape();
  const int ai = a.id(), bi = b.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {a, b}, [tape, ai, bi, yi, n, m]() {
    const auto& dy = tape->grad(yi);
    if (tape->requires_grad(ai)) {
      auto& da = tape->grad(ai);
      for (std::size_t k = 0; k < da.size(); ++k) da[k] += dy[k];
    }
    if (tape->requires_grad(bi)) {
      auto& db = tape->grad(bi);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) db[j] += dy[static_cast<std::size_t>(i) * m + j];
    }
  });
}

namespace {

template <class T, class F, class DA, class DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, F f, DA da_fn, DB db_fn) {
  require(a.shape() == b.shape(), "elementwise: shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  Tensor<T> y(a.shape());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = f(a.value()[k], b.value()[k]);
  Tape<T>* tape = a.tape();
  const int ai = a.id(), bi = b.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {a, b}, [tape, ai, bi, yi, da_fn, db_fn]() {
    const auto& dy = tape->grad(yi);
    const auto& av = tape->value(ai);
    const auto& bv = tape->value(bi);
    if (tape->requires_grad(ai)) {
      auto& da = tape->grad(ai);
      for (std::size_t k = 0; k < da.size(); ++k) da[k] += dy[k] * da_fn(av[k], bv[k]);
    }
    if (tape->requires_grad(bi)) {
      auto& db = tape->grad(bi);
      for (std::size_t k = 0; k < db.size(); ++k) db[k] += dy[k] * db_fn(av[k], bv[k]);
    }
  });
}

}  // namespace

template <class T>
Var<T> Ops<T>::add(const V& a, const V& b) {
  return binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Var<T> Ops<T>::sub(const V& a, const V& b) {
  return binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Var<T> Ops<T>::mul(const V& a, const V& b) {
  return binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Var<T> Ops<T>::scale(const V& a, T s) {
  return unary(
      a, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <class T>
Var<T> Ops<T>::sum(const V& a) {
  T total = T(0);
  for (T v : a.value().data) total += v;
  Tape<T>* tape = a.tape();
  const int ai = a.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(Tensor<T>({1}, std::vector<T>{total}), {a}, [tape, ai, yi]() {
    const T g = tape->grad(yi)[0];
    auto& da = tape->grad(ai);
    for (auto& v : da.data) v += g;
  });
}

template <class T>
Var<T> Ops<T>::reverse_rows(const V& a) {
  const auto& s = a.shape();
  require(s.size() == 2, "reverse_rows: expects a matrix");
  const int n = s[0], m = s[1];
  Tensor<T> y(s);
  for (int i = 0; i < n; ++i)
    std::copy_n(a.value().ptr() + static_cast<std::size_t>(n - 1 - i) * m, m, y.ptr() + static_cast<std::size_t>(i) * m);
  Tape<T>* tape = a.tape();
  const int ai = a.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {a}, [tape, ai, yi, n, m]() {
    const auto& dy = tape->grad(yi);
    auto& da = tape->grad(ai);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        da[static_cast<std::size_t>(n - 1 - i) * m + j] += dy[static_cast<std::size_t>(i) * m + j];
  });
}

namespace {

template <class T>
struct SampleCell {
  int x0, y0, x1, y1;
  T fx, fy;
  bool clamped_x, clamped_y;
};

template <class T>
SampleCell<T> locate(T x, T y, int h, int w) {
  SampleCell<T> c{};
  const T mx = T(w - 1), my = T(h - 1);
  c.clamped_x = !(x > T(0) && x < mx);
  c.clamped_y = !(y > T(0) && y < my);
  x = std::clamp(x, T(0), mx);
  y = std::clamp(y, T(0), my);
  c.x0 = std::min(static_cast<int>(std::floor(x)), std::max(w - 2, 0));
  c.y0 = std::min(static_cast<int>(std::floor(y)), std::max(h - 2, 0));
  c.x1 = std::min(c.x0 + 1, w - 1);
  c.y1 = std::min(c.y0 + 1, h - 1);
  c.fx = x - T(c.x0);
  c.fy = y - T(c.y0);
  return c;
}

}  // namespace

template <class T>
Var<T> Ops<T>::sample_points(const V& map, const V& pts, T stride) {
  const auto& ms = map.shape();
  const auto& ps = pts.shape();
  require(ms.size() == 3 && ps.size() == 2 && ps[1] == 2, "sample_points: expects map (C,H,W), pts (N,2)");
  const int c = ms[0], h = ms[1], w = ms[2], n = ps[0];
  Tensor<T> y({n, c});
  const auto& mv = map.value();
  const auto& pv = pts.value();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const auto cell = locate<T>(pv[2 * i] / stride, pv[2 * i + 1] / stride, h, w);
    const T w00 = (1 - cell.fx) * (1 - cell.fy), w01 = cell.fx * (1 - cell.fy);
    const T w10 = (1 - cell.fx) * cell.fy, w11 = cell.fx * cell.fy;
    for (int ch = 0; ch < c; ++ch) {
      const T* m = mv.ptr() + ch * plane;
      y[static_cast<std::size_t>(i) * c + ch] = w00 * m[cell.y0 * w + cell.x0] + w01 * m[cell.y0 * w + cell.x1] +
                                                w10 * m[cell.y1 * w + cell.x0] + w11 * m[cell.y1 * w + cell.x1];
    }
  }
  Tape<T>* tape = map.tape();
  const int mi = map.id(), pi = pts.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {map, pts}, [tape, mi, pi, yi, c, h, w, n, stride, plane]() {
    const auto& dy = tape->grad(yi);
    const auto& pv = tape->value(pi);
    const auto& mv = tape->value(mi);
    const bool want_map = tape->requires_grad(mi);
    const bool want_pts = tape->requires_grad(pi);
    for (int i = 0; i < n; ++i) {
      const auto cell = locate<T>(pv[2 * i] / stride, pv[2 * i + 1] / stride, h, w);
      const T w00 = (1 - cell.fx) * (1 - cell.fy), w01 = cell.fx * (1 - cell.fy);
      const T w10 = (1 - cell.fx) * cell.fy, w11 = cell.fx * cell.fy;
      T gx = T(0), gy = T(0);
      for (int ch = 0; ch < c; ++ch) {
        const T g = dy[static_cast<std::size_t>(i) * c + ch];
        const std::size_t base = ch * plane;
        const std::size_t i00 = base + cell.y0 * w + cell.x0, i01 = base + cell.y0 * w + cell.x1;
        const std::size_t i10 = base + cell.y1 * w + cell.x0, i11 = base + cell.y1 * w + cell.x1;
        if (want_map) {
          auto& dm = tape->grad(mi);
          dm[i00] += g * w00;
          dm[i01] += g * w01;
          dm[i10] += g * w10;
          dm[i11] += g * w11;
        }
        if (want_pts) {
          gx += g * ((1 - cell.fy) * (mv[i01] - mv[i00]) + cell.fy * (mv[i11] - mv[i10]));
          gy += g * ((1 - cell.fx) * (mv[i10] - mv[i00]) + cell.fx * (mv[i11] - mv[i01]));
        }
      }
      if (want_pts) {
        auto& dp = tape->grad(pi);
        if (!cell.clamped_x && w > 1) dp[2 * i] += gx / stride;
        if (!cell.clamped_y && h > 1) dp[2 * i + 1] += gy / stride;
      }
    }
  });
}

namespace {

template <class T>
T sigm(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

}  // namespace

template <class T>
Var<T> Ops<T>::lstm(const V& x, const V& w_ih, const V& w_hh, const V& b, bool reverse) {
  const auto& xs = x.shape();
  const auto& is = w_ih.shape();
  const auto& hs = w_hh.shape();
  require(xs.size() == 2 && is.size() == 2 && hs.size() == 2 && is[0] == xs[1] && is[1] % 4 == 0 &&
              hs[0] * 4 == is[1] && hs[1] == is[1] && b.value().size() == static_cast<std::size_t>(is[1]),
          "lstm: inconsistent shapes");
  const int n = xs[0], d = xs[1], hid = hs[0], g4 = 4 * hid;

  // gates holds post-activation i, f, g, o per step; cell holds c_t.
  auto gates = std::make_shared<Tensor<T>>(std::vector<int>{n, g4});
  auto cell = std::make_shared<Tensor<T>>(std::vector<int>{n, hid});
  Tensor<T> y({n, hid});

  RowMat<T> pre = as_mat(x.value(), n, d) * as_mat(w_ih.value(), d, g4);
  const auto whh = as_mat(w_hh.value(), hid, g4);
  const T* bias = b.value().ptr();
  Eigen::Matrix<T, 1, Eigen::Dynamic> h_prev = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(hid);
  std::vector<T> c_prev(hid, T(0));
  Eigen::Matrix<T, 1, Eigen::Dynamic> z(g4);
  for (int step = 0; step < n; ++step) {
    const int t = reverse ? n - 1 - step : step;
    z.noalias() = pre.row(t) + h_prev * whh;
    T* gt = gates->ptr() + static_cast<std::size_t>(t) * g4;
    T* ct = cell->ptr() + static_cast<std::size_t>(t) * hid;
    T* ht = y.ptr() + static_cast<std::size_t>(t) * hid;
    for (int j = 0; j < hid; ++j) {
      const T ig = sigm(z[j] + bias[j]);
      const T fg = sigm(z[hid + j] + bias[hid + j]);
      const T gg = std::tanh(z[2 * hid + j] + bias[2 * hid + j]);
      const T og = sigm(z[3 * hid + j] + bias[3 * hid + j]);
      gt[j] = ig;
      gt[hid + j] = fg;
      gt[2 * hid + j] = gg;
      gt[3 * hid + j] = og;
      ct[j] = fg * c_prev[j] + ig * gg;
      ht[j] = og * std::tanh(ct[j]);
      c_prev[j] = ct[j];
      h_prev[j] = ht[j];
    }
  }

  Tape<T>* tape = x.tape();
  const int xi = x.id(), ii = w_ih.id(), hi = w_hh.id(), bi = b.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {x, w_ih, w_hh, b},
                      [tape, xi, ii, hi, bi, yi, n, d, hid, g4, reverse, gates, cell]() {
    const auto& dy = tape->grad(yi);
    const auto& hv = tape->value(yi);
    const auto whh = as_mat(tape->value(hi), hid, g4);
    RowMat<T> dz = RowMat<T>::Zero(n, g4);
    Eigen::Matrix<T, 1, Eigen::Dynamic> dh_next = Eigen::Matrix<T, 1, Eigen::Dynamic>::Zero(hid);
    std::vector<T> dc_next(hid, T(0));
    const bool want_hh = tape->requires_grad(hi);
    RowMat<T> dwhh;
    if (want_hh) dwhh = RowMat<T>::Zero(hid, g4);
    for (int step = n - 1; step >= 0; --step) {
      const int t = reverse ? n - 1 - step : step;
      const int tp = reverse ? t + 1 : t - 1;
      const bool has_prev = step > 0;
      const T* gt = gates->ptr() + static_cast<std::size_t>(t) * g4;
      const T* ct = cell->ptr() + static_cast<std::size_t>(t) * hid;
      const T* cp = has_prev ? cell->ptr() + static_cast<std::size_t>(tp) * hid : nullptr;
      for (int j = 0; j < hid; ++j) {
        const T ig = gt[j], fg = gt[hid + j], gg = gt[2 * hid + j], og = gt[3 * hid + j];
        const T dh = dy[static_cast<std::size_t>(t) * hid + j] + dh_next[j];
        const T tc = std::tanh(ct[j]);
        const T dc = dh * og * (T(1) - tc * tc) + dc_next[j];
        const T c_prev = has_prev ? cp[j] : T(0);
        dz(t, j) = dc * gg * ig * (T(1) - ig);
        dz(t, hid + j) = dc * c_prev * fg * (T(1) - fg);
        dz(t, 2 * hid + j) = dc * ig * (T(1) - gg * gg);
        dz(t, 3 * hid + j) = dh * tc * og * (T(1) - og);
        dc_next[j] = dc * fg;
      }
      dh_next.noalias() = dz.row(t) * whh.transpose();
      if (has_prev && want_hh) {
        dwhh.noalias() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(hv.ptr() + static_cast<std::size_t>(tp) * hid, hid) *
                          dz.row(t);
      }
    }
    if (want_hh) as_mat(tape->grad(hi), hid, g4) += dwhh;
    if (tape->requires_grad(ii)) as_mat(tape->grad(ii), d, g4).noalias() += as_mat(tape->value(xi), n, d).transpose() * dz;
    if (tape->requires_grad(bi)) {
      auto& db = tape->grad(bi);
      for (int j = 0; j < g4; ++j) {
        T acc = 0;
        for (int k = 0; k < dz.rows(); ++k) acc += dz(k, j);
        db[j] += acc;
      }
    }
    if (tape->requires_grad(xi)) as_mat(tape->grad(xi), n, d).noalias() += dz * as_mat(tape->value(ii), d, g4).transpose();
  });
}

template <class T>
Var<T> Ops<T>::circular_conv1d(const V& x, const V& w, const V& b, int kernel) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  require(xs.size() == 2 && ws.size() == 2 && ws[0] == kernel * xs[1] && kernel % 2 == 1,
          "circular_conv1d: inconsistent shapes");
  const int n = xs[0], cin = xs[1], cout = ws[1], half = kernel / 2;
  auto gather = [n, cin, kernel, half](const T* src, T* cols) {
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < kernel; ++k) {
        const int r = ((i + k - half) % n + n) % n;
        std::copy_n(src + static_cast<std::size_t>(r) * cin, cin,
                    cols + (static_cast<std::size_t>(i) * kernel + k) * cin);
      }
  };
  const int patch = kernel * cin;
  Tensor<T> cols({n, patch});
  gather(x.value().ptr(), cols.ptr());
  Tensor<T> y({n, cout});
  as_mat(y, n, cout).noalias() = as_mat(cols, n, patch) * as_mat(w.value(), patch, cout);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < cout; ++j) y[static_cast<std::size_t>(i) * cout + j] += b.value()[j];

  Tape<T>* tape = x.tape();
  const int xi = x.id(), wi = w.id(), bi = b.id();
  const int yi = static_cast<int>(tape->size());
  return tape->record(std::move(y), {x, w, b}, [tape, xi, wi, bi, yi, n, cin, cout, kernel, half, patch, gather]() {
    const auto dy = as_mat(tape->grad(yi), n, cout);
    if (tape->requires_grad(wi)) {
      Tensor<T> cols({n, patch});
      gather(tape->value(xi).ptr(), cols.ptr());
      as_mat(tape->grad(wi), patch, cout).noalias() += as_mat(cols, n, patch).transpose() * dy;
    }
    if (tape->requires_grad(bi)) {
      auto& db = tape->grad(bi);
      for (int j = 0; j < cout; ++j) {
        T acc = 0;
        for (int k = 0; k < dy.rows(); ++k) acc += dy(k, j);
        db[j] += acc;
      }
    }
    if (tape->requires_grad(xi)) {
      RowMat<T> dcols = dy * as_mat(tape->value(wi), patch, cout).transpose();
      auto& dx = tape->grad(xi);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < kernel; ++k) {
          const int r = ((i + k - half) % n + n) % n;
          for (int c = 0; c < cin; ++c) dx[static_cast<std::size_t>(r) * cin + c] += dcols(i, k * cin + c);
        }
    }
  });
}

template struct Ops<float>;
template struct Ops<double>;

}  // namespace textdeform::ad
