#ifndef HOMOGLAB_SPECTRAL_HPP
#define HOMOGLAB_SPECTRAL_HPP

// Fourier multipliers on the periodic box, backed by FFTW.
//
// The lattice Laplacian div*(grad) diagonalizes in the Fourier basis with
// eigenvalue sum_i 2 (1 - cos(2 pi k_i / L)). Multipliers here are
// functions of the per-axis eigenvalues mu_i(k) = 2 (1 - cos(2 pi k_i / L)).

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include <fftw3.h>

#include "homoglab/lattice.hpp"

namespace homoglab {

namespace detail {

struct FftwBuffer {
  explicit FftwBuffer(std::size_t bytes) : ptr(fftw_malloc(bytes)) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  void* ptr;
};

class FftPlan {
 public:
  FftPlan(int d, int L) : d_(d), L_(L) {
    n_real_ = 1;
    for (int k = 0; k < d; ++k) n_real_ *= static_cast<std::size_t>(L);
    n_complex_ = n_real_ / static_cast<std::size_t>(L) * static_cast<std::size_t>(L / 2 + 1);
    FftwBuffer r(sizeof(double) * n_real_);
    FftwBuffer c(sizeof(fftw_complex) * n_complex_);
    std::array<int, 3> dims{L, L, L};
    // FFTW is row-major with the last dimension fastest; our first coordinate
    // runs fastest, so axis 0 of ours is FFTW's last (halved) dimension.
    fwd_ = fftw_plan_dft_r2c(d, dims.data(), static_cast<double*>(r.ptr), static_cast<fftw_complex*>(c.ptr),
                             FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_c2r(d, dims.data(), static_cast<fftw_complex*>(c.ptr), static_cast<double*>(r.ptr),
                             FFTW_ESTIMATE);
  }
  // Plans live in a process-wide cache and are only destroyed at exit.
  ~FftPlan() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  /// out = F^{-1}[ symbol(k) F[in] ], symbol given per Fourier index.
  void apply(std::span<const double> in, std::span<double> out,
             const std::function<double(const std::array<int, 3>&)>& symbol) const {
    FftwBuffer r(sizeof(double) * n_real_);
    FftwBuffer c(sizeof(fftw_complex) * n_complex_);
    auto* rp = static_cast<double*>(r.ptr);
    auto* cp = static_cast<fftw_complex*>(c.ptr);
    std::copy(in.begin(), in.end(), rp);
    fftw_execute_dft_r2c(fwd_, rp, cp);
    const int half = L_ / 2 + 1;
    std::array<int, 3> k{0, 0, 0};
    for (std::size_t idx = 0; idx < n_complex_; ++idx) {
      std::size_t rest = idx;
      k[0] = static_cast<int>(rest % half);
      rest /= half;
      for (int a = 1; a < d_; ++a) {
        k[a] = static_cast<int>(rest % L_);
        rest /= L_;
      }
      const double s = symbol(k) / static_cast<double>(n_real_);
      cp[idx][0] *= s;
      cp[idx][1] *= s;
    }
    fftw_execute_dft_c2r(bwd_, cp, rp);
    std::copy(rp, rp + n_real_, out.begin());
  }

 private:
  int d_, L_;
  std::size_t n_real_ = 0, n_complex_ = 0;
  fftw_plan fwd_{}, bwd_{};
};

inline std::shared_ptr<const FftPlan> fft_plan(int d, int L) {
  static std::map<std::pair<int, int>, std::shared_ptr<const FftPlan>> cache;
  std::lock_guard lock(FftPlan::planner_mutex());
  auto& slot = cache[{d, L}];
  if (!slot) slot = std::make_shared<const FftPlan>(d, L);
  return slot;
}

}  // namespace detail

/// Per-axis Laplacian eigenvalue 2 (1 - cos(2 pi k / L)).
inline double axis_eigenvalue(int k, int L) {
  return 2.0 * (1.0 - std::cos(2.0 * std::numbers::pi * k / static_cast<double>(L)));
}

/// Applies a real, even Fourier multiplier m(mu_1, ..., mu_d) to u.
inline void apply_multiplier(const Box& box, std::span<const double> u, std::span<double> out,
                             const std::function<double(const std::array<double, 3>&)>& m) {
  const int L = box.side();
  const int d = box.dim();
  std::vector<double> table(L);
  for (int k = 0; k < L; ++k) table[k] = axis_eigenvalue(k, L);
  // FFTW axis a (0 = fastest) corresponds to our coordinate a.
  auto symbol = [&](const std::array<int, 3>& k) {
    std::array<double, 3> mu{0.0, 0.0, 0.0};
    for (int a = 0; a < d; ++a) mu[a] = table[k[a]];
    return m(mu);
  };
  detail::fft_plan(d, L)->apply(u, out, symbol);
}

/// Exact solve of (mass + sum_i c_i mu_i) u = f on the torus. When mass is
/// zero the constant mode is projected out (f's mean is ignored, u has mean 0).
inline ScalarField spectral_solve(const Box& box, const ScalarField& f, double mass, const std::array<double, 3>& c) {
  ScalarField u(box);
  const int d = box.dim();
  apply_multiplier(box, f.values, u.values, [&](const std::array<double, 3>& mu) {
    double s = mass;
    for (int a = 0; a < d; ++a) s += c[a] * mu[a];
    return s > 0.0 ? 1.0 / s : 0.0;
  });
  return u;
}

}  // namespace homoglab

#endif  // HOMOGLAB_SPECTRAL_HPP
