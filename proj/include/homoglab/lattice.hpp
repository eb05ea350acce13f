#ifndef HOMOGLAB_LATTICE_HPP
#define HOMOGLAB_LATTICE_HPP

// Discrete calculus on periodic lattice boxes (Z/LZ)^d.
//
// Site indexing: x = (x_1, ..., x_d) with 0 <= x_k < L maps to
//   index = sum_k x_k L^(k-1),
// so the first coordinate runs fastest. Vector fields store component i of
// site x at values[x * d + i]; that component lives on the edge x -> x + e_i.

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace homoglab {

using Site = std::size_t;

class LatticeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Periodic cubic box of side L in dimension d (1 <= d <= 3).
class Box {
 public:
  Box() = default;
  Box(int d, int L) : d_(d), L_(L) {
    if (d < 1 || d > 3) throw LatticeError("box dimension must be 1, 2 or 3");
    if (L < 2) throw LatticeError("box side length must be at least 2");
    n_ = 1;
    for (int k = 0; k < d; ++k) n_ *= static_cast<std::size_t>(L);
    auto t = std::make_shared<Tables>();
    t->fwd.resize(n_ * d_);
    t->bwd.resize(n_ * d_);
    std::size_t stride = 1;
    for (int i = 0; i < d_; ++i) {
      for (Site x = 0; x < n_; ++x) {
        const auto xi = static_cast<int>((x / stride) % L_);
        t->fwd[x * d_ + i] = xi == L_ - 1 ? x - (L_ - 1) * stride : x + stride;
        t->bwd[x * d_ + i] = xi == 0 ? x + (L_ - 1) * stride : x - stride;
      }
      stride *= static_cast<std::size_t>(L_);
    }
    tables_ = std::move(t);
  }

  int dim() const { return d_; }
  int side() const { return L_; }
  std::size_t size() const { return n_; }

  /// x + e_i with periodic wrap.
  Site forward(Site x, int i) const { return tables_->fwd[x * d_ + i]; }
  /// x - e_i with periodic wrap.
  Site backward(Site x, int i) const { return tables_->bwd[x * d_ + i]; }

  std::array<int, 3> coords(Site x) const {
    std::array<int, 3> c{0, 0, 0};
    for (int k = 0; k < d_; ++k) {
      c[k] = static_cast<int>(x % L_);
      x /= L_;
    }
    return c;
  }

  Site index(const std::array<int, 3>& c) const {
    Site x = 0;
    for (int k = d_ - 1; k >= 0; --k) {
      const int ck = ((c[k] % L_) + L_) % L_;
      x = x * L_ + ck;
    }
    return x;
  }

  /// Site x + offset with periodic wrap.
  Site shift(Site x, const std::array<int, 3>& offset) const {
    auto c = coords(x);
    for (int k = 0; k < d_; ++k) c[k] += offset[k];
    return index(c);
  }

  /// Euclidean length of the minimal periodic image of x.
  double torus_norm(Site x) const {
    const auto c = coords(x);
    double s = 0.0;
    for (int k = 0; k < d_; ++k) {
      const int m = std::min(c[k], L_ - c[k]);
      s += static_cast<double>(m) * m;
    }
    return std::sqrt(s);
  }

  friend bool operator==(const Box& a, const Box& b) { return a.d_ == b.d_ && a.L_ == b.L_; }

 private:
  struct Tables {
    std::vector<Site> fwd;
    std::vector<Site> bwd;
  };
  int d_ = 0;
  int L_ = 0;
  std::size_t n_ = 0;
  std::shared_ptr<const Tables> tables_;
};

inline void require_same_box(const Box& a, const Box& b) {
  if (!(a == b)) throw LatticeError("fields live on different boxes");
}

struct ScalarField {
  Box box;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(const Box& b, double fill = 0.0) : box(b), values(b.size(), fill) {}
  ScalarField(const Box& b, std::vector<double> v) : box(b), values(std::move(v)) {
    if (values.size() != box.size()) throw LatticeError("scalar field length does not match box");
  }

  double& operator[](Site x) { return values[x]; }
  double operator[](Site x) const { return values[x]; }
  std::size_t size() const { return values.size(); }
};

struct VectorField {
  Box box;
  std::vector<double> values;

  VectorField() = default;
  explicit VectorField(const Box& b, double fill = 0.0) : box(b), values(b.size() * b.dim(), fill) {}

  double& operator()(Site x, int i) { return values[x * box.dim() + i]; }
  double operator()(Site x, int i) const { return values[x * box.dim() + i]; }

  ScalarField component(int i) const {
    ScalarField s(box);
    for (Site x = 0; x < box.size(); ++x) s[x] = (*this)(x, i);
    return s;
  }
};

/// Per-site d x d matrices, antisymmetric by construction: the only mutator
/// writes an entry and its mirror with opposite sign.
class SkewField {
 public:
  SkewField() = default;
  explicit SkewField(const Box& b) : box_(b), values_(b.size() * b.dim() * b.dim(), 0.0) {}

  const Box& box() const { return box_; }
  double operator()(Site x, int j, int k) const { return values_[slot(x, j, k)]; }
  void set(Site x, int j, int k, double v) {
    if (j == k) {
      if (v != 0.0) throw LatticeError("skew field diagonal must vanish");
      return;
    }
    values_[slot(x, j, k)] = v;
    values_[slot(x, k, j)] = -v;
  }
  std::span<const double> raw() const { return values_; }

 private:
  std::size_t slot(Site x, int j, int k) const {
    const auto d = static_cast<std::size_t>(box_.dim());
    return (x * d + j) * d + k;
  }
  Box box_;
  std::vector<double> values_;
};

/// Diagonal coefficient field a(x) = diag(a_1(x), ..., a_d(x)).
struct CoefficientField {
  Box box;
  std::vector<double> diag;

  CoefficientField() = default;
  explicit CoefficientField(const Box& b, double fill = 1.0) : box(b), diag(b.size() * b.dim(), fill) {}

  double& operator()(Site x, int i) { return diag[x * box.dim() + i]; }
  double operator()(Site x, int i) const { return diag[x * box.dim() + i]; }

  /// True iff every entry lies strictly inside (lambda, 1).
  bool within(double lambda) const {
    for (double v : diag)
      if (!(v > lambda && v < 1.0)) return false;
    return true;
  }
};

// --- reductions -----------------------------------------------------------

/// Neumaier-compensated sum in fixed (index) order.
inline double compensated_sum(std::span<const double> v) {
  double s = 0.0, c = 0.0;
  for (double x : v) {
    const double t = s + x;
    if (std::abs(s) >= std::abs(x))
      c += (s - t) + x;
    else
      c += (x - t) + s;
    s = t;
  }
  return s + c;
}

inline double mean(const ScalarField& u) {
  return compensated_sum(u.values) / static_cast<double>(u.size());
}

inline double inner(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw LatticeError("inner product of fields with different lengths");
  double s = 0.0, c = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double x = u[k] * v[k];
    const double t = s + x;
    if (std::abs(s) >= std::abs(x))
      c += (s - t) + x;
    else
      c += (x - t) + s;
    s = t;
  }
  return s + c;
}

inline double inner(const ScalarField& u, const ScalarField& v) {
  require_same_box(u.box, v.box);
  return inner(std::span<const double>(u.values), std::span<const double>(v.values));
}

inline double inner(const VectorField& u, const VectorField& v) {
  require_same_box(u.box, v.box);
  return inner(std::span<const double>(u.values), std::span<const double>(v.values));
}

inline double norm_l2(const ScalarField& u) { return std::sqrt(inner(u, u)); }
inline double norm_l2(const VectorField& u) { return std::sqrt(inner(u, u)); }

/// Box average of each component of a vector field.
inline std::vector<double> component_means(const VectorField& F) {
  const int d = F.box.dim();
  std::vector<double> out(d);
  std::vector<double> buf(F.box.size());
  for (int i = 0; i < d; ++i) {
    for (Site x = 0; x < F.box.size(); ++x) buf[x] = F(x, i);
    out[i] = compensated_sum(buf) / static_cast<double>(buf.size());
  }
  return out;
}

// --- difference operators -------------------------------------------------

/// (grad u)_i(x) = u(x + e_i) - u(x).
inline VectorField grad(const ScalarField& u) {
  const Box& b = u.box;
  VectorField g(b);
  const int d = b.dim();
  for (Site x = 0; x < b.size(); ++x)
    for (int i = 0; i < d; ++i) g(x, i) = u[b.forward(x, i)] - u[x];
  return g;
}

/// (div* F)(x) = sum_i F_i(x - e_i) - F_i(x); the adjoint of grad.
inline ScalarField div_star(const VectorField& F) {
  const Box& b = F.box;
  ScalarField out(b);
  const int d = b.dim();
  for (Site x = 0; x < b.size(); ++x) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += F(b.backward(x, i), i) - F(x, i);
    out[x] = s;
  }
  return out;
}

/// out = div*(a grad u), raw-buffer form used by the solvers.
inline void apply_elliptic(const CoefficientField& a, std::span<const double> u, std::span<double> out) {
  const Box& b = a.box;
  const int d = b.dim();
  const std::size_t n = b.size();
  const double* ad = a.diag.data();
  for (Site x = 0; x < n; ++x) {
    double s = 0.0;
    const double ux = u[x];
    for (int i = 0; i < d; ++i) {
      const Site xp = b.forward(x, i);
      const Site xm = b.backward(x, i);
      s += ad[x * d + i] * (ux - u[xp]) + ad[xm * d + i] * (ux - u[xm]);
    }
    out[x] = s;
  }
}

inline ScalarField apply_elliptic(const CoefficientField& a, const ScalarField& u) {
  require_same_box(a.box, u.box);
  ScalarField out(u.box);
  apply_elliptic(a, u.values, out.values);
  return out;
}

/// out = div*(grad u), the constant-coefficient lattice Laplacian (positive).
inline void apply_laplacian(const Box& b, std::span<const double> u, std::span<double> out) {
  const int d = b.dim();
  for (Site x = 0; x < b.size(); ++x) {
    double s = 2.0 * d * u[x];
    for (int i = 0; i < d; ++i) s -= u[b.forward(x, i)] + u[b.backward(x, i)];
    out[x] = s;
  }
}

/// Pointwise a(x) v(x) for a diagonal coefficient field.
inline VectorField multiply(const CoefficientField& a, const VectorField& v) {
  require_same_box(a.box, v.box);
  VectorField out(v.box);
  for (std::size_t k = 0; k < v.values.size(); ++k) out.values[k] = a.diag[k] * v.values[k];
  return out;
}

}  // namespace homoglab

#endif  // HOMOGLAB_LATTICE_HPP
