#pragma once

// Real FFT pair for arbitrary lengths, double precision throughout.
// Power-of-two sizes use an iterative radix-2 transform with a cached twiddle
// table; other sizes go through Bluestein's chirp-z reformulation, so the
// round trip stays exact to ~1e-13 even for T = 2250 = 2 * 3^2 * 5^3.

#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "coreecg/common.hpp"

namespace coreecg::fftcore {

using cd = std::complex<double>;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

namespace detail {

struct Radix2Plan {
  std::size_t n = 0;
  std::vector<std::size_t> bitrev;
  // contiguous twiddles per stage: stage s holds exp(-2*pi*i*j/len) for
  // j < len/2, so the butterfly loop walks memory linearly
  std::vector<std::vector<cd>> stage_tw;
};

inline std::shared_ptr<const Radix2Plan> radix2_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<const Radix2Plan>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto plan = std::make_shared<Radix2Plan>();
  plan->n = n;
  plan->bitrev.resize(n);
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    plan->bitrev[i] = j;
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    std::vector<cd> tw(len / 2);
    for (std::size_t j = 0; j < len / 2; ++j) {
      double a = -2.0 * kPi * static_cast<double>(j) / static_cast<double>(len);
      tw[j] = cd(std::cos(a), std::sin(a));
    }
    plan->stage_tw.push_back(std::move(tw));
  }
  cache[n] = plan;
  return plan;
}

// In-place radix-2; forward is the unnormalized DFT, invert conjugates the
// twiddles and leaves the 1/n to the caller.
inline void fft_pow2(std::vector<cd>& a, bool invert) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  auto plan = radix2_plan(n);
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t j = plan->bitrev[i];
    if (i < j) std::swap(a[i], a[j]);
  }
  std::size_t stage = 0;
  for (std::size_t len = 2; len <= n; len <<= 1, ++stage) {
    const auto& tw = plan->stage_tw[stage];
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < n; i += len) {
      cd* lo = a.data() + i;
      cd* hi = lo + half;
      for (std::size_t j = 0; j < half; ++j) {
        const cd w = invert ? std::conj(tw[j]) : tw[j];
        const cd u = lo[j];
        const cd v = hi[j] * w;
        lo[j] = u + v;
        hi[j] = u - v;
      }
    }
  }
}

struct BluesteinPlan {
  std::size_t n = 0;
  std::size_t m = 0;            // padded power-of-two size >= 2n-1
  std::vector<cd> chirp;        // chirp[k] = exp(-i*pi*k^2/n)
  std::vector<cd> kernel_fft;   // FFT of the circular conj-chirp kernel
};

inline std::shared_ptr<const BluesteinPlan> bluestein_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<const BluesteinPlan>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto plan = std::make_shared<BluesteinPlan>();
  plan->n = n;
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  plan->m = m;
  plan->chirp.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle small so cos/sin stay accurate
    std::uint64_t q = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    double a = -kPi * static_cast<double>(q) / static_cast<double>(n);
    plan->chirp[k] = cd(std::cos(a), std::sin(a));
  }
  std::vector<cd> kern(m, cd(0, 0));
  for (std::size_t k = 0; k < n; ++k) {
    cd c = std::conj(plan->chirp[k]);
    kern[k] = c;
    if (k) kern[m - k] = c;
  }
  fft_pow2(kern, false);
  plan->kernel_fft = std::move(kern);
  cache[n] = plan;
  return plan;
}

inline void dft_bluestein_forward(std::vector<cd>& a) {
  const std::size_t n = a.size();
  auto plan = bluestein_plan(n);
  std::vector<cd> b(plan->m, cd(0, 0));
  for (std::size_t k = 0; k < n; ++k) b[k] = a[k] * plan->chirp[k];
  fft_pow2(b, false);
  for (std::size_t k = 0; k < plan->m; ++k) b[k] *= plan->kernel_fft[k];
  fft_pow2(b, true);
  const double inv_m = 1.0 / static_cast<double>(plan->m);
  for (std::size_t k = 0; k < n; ++k) a[k] = b[k] * inv_m * plan->chirp[k];
}

}  // namespace detail

// Forward: X_j = sum_k x_k exp(-2*pi*i*j*k/n) (unnormalized).
// Invert:  x_k = (1/n) sum_j X_j exp(+2*pi*i*j*k/n).
inline void dft(std::vector<cd>& a, bool invert) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (invert) {
    for (auto& v : a) v = std::conj(v);
    dft(a, false);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& v : a) v = std::conj(v) * inv_n;
    return;
  }
  if (is_pow2(n)) {
    detail::fft_pow2(a, false);
  } else {
    detail::dft_bluestein_forward(a);
  }
}

inline std::size_t rfft_bins(std::size_t t) { return t / 2 + 1; }

// Real forward transform: length-T real input to K = floor(T/2)+1 bins,
// interleaved (re, im).
inline std::vector<double> rfft(const double* x, std::size_t t) {
  std::vector<cd> a(t);
  for (std::size_t i = 0; i < t; ++i) a[i] = cd(x[i], 0.0);
  dft(a, false);
  const std::size_t k = rfft_bins(t);
  std::vector<double> out(2 * k);
  for (std::size_t j = 0; j < k; ++j) {
    out[2 * j] = a[j].real();
    out[2 * j + 1] = a[j].imag();
  }
  return out;
}

// Inverse of rfft under the Hermitian extension. Imaginary parts of the DC
// bin and (for even T) the Nyquist bin are ignored.
inline std::vector<double> irfft(const double* spec, std::size_t k, std::size_t t) {
  if (k != rfft_bins(t))
    throw ShapeError("irfft: expected K=" + std::to_string(rfft_bins(t)) + " bins for T=" +
                     std::to_string(t) + ", got " + std::to_string(k));
  std::vector<cd> a(t, cd(0, 0));
  a[0] = cd(spec[0], 0.0);
  const bool even = (t % 2 == 0);
  for (std::size_t j = 1; j < k; ++j) {
    const bool nyq = even && j == k - 1;
    cd v(spec[2 * j], nyq ? 0.0 : spec[2 * j + 1]);
    a[j] = v;
    if (t - j != j) a[t - j] = std::conj(v);
  }
  dft(a, true);
  std::vector<double> out(t);
  for (std::size_t i = 0; i < t; ++i) out[i] = a[i].real();
  return out;
}

// Adjoint of the rfft linear map: grad_x = T * irfft(g with interior bins
// halved). DC and Nyquist columns appear once in the Hermitian extension,
// interior bins twice, hence the factor-2 correction.
inline std::vector<double> rfft_adjoint(const double* g, std::size_t k, std::size_t t) {
  std::vector<double> h(2 * k);
  const bool even = (t % 2 == 0);
  for (std::size_t j = 0; j < k; ++j) {
    const bool edge = (j == 0) || (even && j == k - 1);
    const double s = edge ? 1.0 : 0.5;
    h[2 * j] = g[2 * j] * s;
    h[2 * j + 1] = g[2 * j + 1] * s;
  }
  std::vector<double> out = irfft(h.data(), k, t);
  for (auto& v : out) v *= static_cast<double>(t);
  return out;
}

// Adjoint of irfft: grad_spec = (2/T) * rfft(g) with (1/T) on the edge bins
// and zero gradient for the ignored imaginary components.
inline std::vector<double> irfft_adjoint(const double* g, std::size_t t, std::size_t k) {
  std::vector<double> r = rfft(g, t);
  const bool even = (t % 2 == 0);
  const double two_over_t = 2.0 / static_cast<double>(t);
  const double one_over_t = 1.0 / static_cast<double>(t);
  for (std::size_t j = 0; j < k; ++j) {
    const bool edge = (j == 0) || (even && j == k - 1);
    const double s = edge ? one_over_t : two_over_t;
    r[2 * j] *= s;
    r[2 * j + 1] = edge ? 0.0 : r[2 * j + 1] * s;
  }
  r.resize(2 * k);
  return r;
}

}  // namespace coreecg::fftcore
