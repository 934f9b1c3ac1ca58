#pragma once

// The primitive set of the autodiff engine. Exactly these kinds are exposed
// through apply_primitive:
//   matmul add mul conv1d layer_norm softmax gelu sigmoid mean_pool concat
//   index_select scatter rfft irfft cosine_similarity scale
// plus reshape, which is a metadata view with identity backward rather than a
// compute primitive. Every op validates shapes up front and, when any input
// is recorded, pushes a backward closure onto the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coreecg/fft.hpp"
#include "coreecg/rng.hpp"
#include "coreecg/tensor.hpp"

namespace coreecg {

namespace detail {

template <typename T>
Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> ts) {
  Tape<T>* tp = nullptr;
  for (const auto* t : ts) {
    if (!t->recorded()) continue;
    if (tp && t->tape != tp) throw GraphError("operands recorded on different tapes");
    tp = t->tape;
  }
  return tp;
}

template <typename T>
Tensor<T> make_result(Tape<T>* tp, Shape shape, std::vector<T> data,
                      typename Tape<T>::BackFn back) {
  Tensor<T> out(std::move(shape), std::make_shared<std::vector<T>>(std::move(data)));
  if (tp) {
    out.tape = tp;
    out.node = tp->add_node(out.shape, std::move(back));
  }
  return out;
}

inline Shape pad_shape(const Shape& s, std::size_t rank) {
  Shape p(rank, 1);
  std::copy(s.begin(), s.end(), p.begin() + (rank - s.size()));
  return p;
}

inline bool broadcast_shapes(const Shape& a, const Shape& b, Shape& out) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape pa = pad_shape(a, rank), pb = pad_shape(b, rank);
  out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i]) out[i] = pa[i];
    else if (pa[i] == 1) out[i] = pb[i];
    else if (pb[i] == 1) out[i] = pa[i];
    else return false;
  }
  return true;
}

// Row-major strides with 0 on broadcast dims.
inline std::vector<std::size_t> bcast_strides(const Shape& padded, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = padded.size(); i-- > 0;) {
    st[i] = (padded[i] == 1 && out[i] != 1) ? 0 : acc;
    acc *= padded[i];
  }
  return st;
}

// Odometer walk over the broadcast output; f(out_idx, a_idx, b_idx).
template <typename F>
void for_each_bcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t n = numel(out);
  if (n == 0) return;
  Shape pa = pad_shape(a, rank), pb = pad_shape(b, rank);
  auto sa = bcast_strides(pa, out), sb = bcast_strides(pb, out);
  std::vector<std::size_t> ctr(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0;; ++i) {
    f(i, ia, ib);
    if (i + 1 == n) break;
    for (std::size_t d = rank; d-- > 0;) {
      ++ctr[d];
      ia += sa[d];
      ib += sb[d];
      if (ctr[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      ctr[d] = 0;
    }
  }
}

// C[M,N] += opA(A) * opB(B); A stored ta ? [K,M] : [M,K], B stored
// tb ? [N,K] : [K,N]. Accumulates, so grads can sum in place. The axpy-style
// paths unroll 4 steps of the contraction so short rows (attention heads)
// do not drown in loop overhead.
template <typename T>
void transpose_into(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  constexpr std::size_t kBlk = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlk)
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlk) {
      const std::size_t i1 = std::min(i0 + kBlk, rows), j1 = std::min(j0 + kBlk, cols);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
}

template <typename T>
void mm_acc(const T* A, std::size_t M, std::size_t K, bool ta, const T* B, std::size_t N, bool tb,
            T* C) {
  if (!ta && !tb) {
    if (N <= 32) {
      // narrow output rows fit in registers; accumulate locally across the
      // whole contraction before touching C
      for (std::size_t i = 0; i < M; ++i) {
        T cloc[32] = {};
        const T* arow = A + i * K;
        for (std::size_t p = 0; p < K; ++p) {
          const T a = arow[p];
          const T* __restrict b = B + p * N;
          for (std::size_t j = 0; j < N; ++j) cloc[j] += a * b[j];
        }
        T* c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += cloc[j];
      }
      return;
    }
    for (std::size_t i = 0; i < M; ++i) {
      T* __restrict c = C + i * N;
      const T* arow = A + i * K;
      std::size_t p = 0;
      for (; p + 4 <= K; p += 4) {
        const T a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
        const T* b0 = B + p * N;
        const T* b1 = b0 + N;
        const T* b2 = b1 + N;
        const T* b3 = b2 + N;
        for (std::size_t j = 0; j < N; ++j)
          c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
      for (; p < K; ++p) {
        const T a = arow[p];
        const T* b = B + p * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
      }
    }
  } else if (!ta && tb) {
    // short dot lengths vectorize poorly; transpose B once and run the
    // axpy path instead
    if (K <= 64 && N >= 64) {
      std::vector<T> bt(K * N);
      for (std::size_t j = 0; j < N; ++j)
        for (std::size_t p = 0; p < K; ++p) bt[p * N + j] = B[j * K + p];
      mm_acc(A, M, K, false, bt.data(), N, false, C);
      return;
    }
    for (std::size_t i = 0; i < M; ++i) {
      const T* arow = A + i * K;
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) {
        const T* brow = B + j * K;
        T s = 0;
        for (std::size_t p = 0; p < K; ++p) s += arow[p] * brow[p];
        c[j] += s;
      }
    }
  } else if (ta && !tb) {
    // column-strided reads thrash the cache; when the contraction is long
    // and the output narrow, transpose A once and reuse the NN path
    if (N <= 32 && K >= 64) {
      std::vector<T> at(M * K);
      transpose_into(A, K, M, at.data());
      mm_acc(at.data(), M, K, false, B, N, false, C);
      return;
    }
    std::size_t p = 0;
    for (; p + 4 <= K; p += 4) {
      const T* a0 = A + p * M;
      const T* a1 = a0 + M;
      const T* a2 = a1 + M;
      const T* a3 = a2 + M;
      const T* b0 = B + p * N;
      const T* b1 = b0 + N;
      const T* b2 = b1 + N;
      const T* b3 = b2 + N;
      for (std::size_t i = 0; i < M; ++i) {
        T* __restrict c = C + i * N;
        const T v0 = a0[i], v1 = a1[i], v2 = a2[i], v3 = a3[i];
        for (std::size_t j = 0; j < N; ++j)
          c[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
      }
    }
    for (; p < K; ++p) {
      const T* arow = A + p * M;
      const T* b = B + p * N;
      for (std::size_t i = 0; i < M; ++i) {
        const T a = arow[i];
        T* c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < M; ++i) {
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) {
        T s = 0;
        for (std::size_t p = 0; p < K; ++p) s += A[p * M + i] * B[j * K + p];
        c[j] += s;
      }
    }
  }
}

}  // namespace detail

// ---- view ------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape) + " -> " + shape_str(shape) +
                     " changes element count");
  Tensor<T> out(shape, x.data);  // shares the buffer
  if (x.recorded()) {
    out.tape = x.tape;
    const int px = x.node;
    out.node = x.tape->add_node(shape, [px](Tape<T>& tp, const std::vector<T>& g) {
      auto& gx = tp.grad_buf(px);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

// ---- matmul ----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape) + " x " +
                     shape_str(b.shape));
  const std::size_t m = ta ? a.shape[1] : a.shape[0];
  const std::size_t ka = ta ? a.shape[0] : a.shape[1];
  const std::size_t kb = tb ? b.shape[1] : b.shape[0];
  const std::size_t n = tb ? b.shape[0] : b.shape[1];
  if (ka != kb)
    throw ShapeError("matmul: inner dims disagree, " + shape_str(a.shape) + (ta ? "^T" : "") +
                     " x " + shape_str(b.shape) + (tb ? "^T" : ""));
  std::vector<T> out(m * n, T(0));
  detail::mm_acc(a.ptr(), m, ka, ta, b.ptr(), n, tb, out.data());

  Tape<T>* tp = detail::tape_of<T>({&a, &b});
  if (!tp) return Tensor<T>::constant({m, n}, std::move(out));
  const int pa = a.node, pb = b.node;
  auto ad = a.data, bd = b.data;
  const std::size_t k = ka;
  return detail::make_result<T>(
      tp, {m, n}, std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        if (pa >= 0) {
          auto& ga = t.grad_buf(pa);
          if (!ta)
            detail::mm_acc(g.data(), m, n, false, bd->data(), k, !tb, ga.data());
          else
            detail::mm_acc(bd->data(), k, n, tb, g.data(), m, true, ga.data());
        }
        if (pb >= 0) {
          auto& gb = t.grad_buf(pb);
          if (!tb)
            detail::mm_acc(ad->data(), k, m, !ta, g.data(), n, false, gb.data());
          else
            detail::mm_acc(g.data(), n, m, true, ad->data(), k, ta, gb.data());
        }
      });
}

// ---- elementwise add / mul with numpy-style broadcasting ---------------

namespace detail {

// Index pattern of one operand against the broadcast output: identical
// layout, a repeated suffix block ([L,D] op [D]), or a dilated prefix
// ([C,K,2] op [C,K,1]). Anything else walks the generic odometer.
struct BcastPat {
  int kind = -1;      // 0 full, 1 suffix, 2 prefix, -1 generic
  std::size_t q = 1;  // suffix: block size; prefix: inner repeat count
};

inline BcastPat classify_bcast(const Shape& s, const Shape& out) {
  BcastPat pat;
  const std::size_t n = numel(out), ns = numel(s);
  if (ns == n) {
    pat.kind = 0;
    return pat;
  }
  Shape p = pad_shape(s, out.size());
  std::size_t i = out.size();
  while (i > 0 && p[i - 1] == out[i - 1]) --i;
  bool suffix = true;
  for (std::size_t q = 0; q < i; ++q)
    if (p[q] != 1) suffix = false;
  if (suffix) {
    pat.kind = 1;
    pat.q = ns;
    return pat;
  }
  std::size_t j = 0;
  while (j < out.size() && p[j] == out[j]) ++j;
  bool prefix = true;
  for (std::size_t q = j; q < out.size(); ++q)
    if (p[q] != 1) prefix = false;
  if (prefix) {
    pat.kind = 2;
    pat.q = n / ns;
    return pat;
  }
  return pat;
}

struct BcastStepper {
  BcastPat pat;
  std::size_t cur = 0, c = 0;
  std::size_t step() {
    if (pat.kind == 0) return cur++;
    if (pat.kind == 1) {
      const std::size_t r = cur;
      if (++cur == pat.q) cur = 0;
      return r;
    }
    const std::size_t r = cur;
    if (++c == pat.q) {
      c = 0;
      ++cur;
    }
    return r;
  }
};

template <typename T, bool kMul>
Tensor<T> binary_bcast(const Tensor<T>& a, const Tensor<T>& b, const char* name) {
  Shape oshape;
  if (!broadcast_shapes(a.shape, b.shape, oshape))
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape) + " do not broadcast");
  const std::size_t n = numel(oshape);
  std::vector<T> out(n);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  const BcastPat pat_a = classify_bcast(a.shape, oshape);
  const BcastPat pat_b = classify_bcast(b.shape, oshape);
  const bool fast = pat_a.kind >= 0 && pat_b.kind >= 0;
  if (a.shape == b.shape) {
    for (std::size_t i = 0; i < n; ++i) out[i] = kMul ? pa[i] * pb[i] : pa[i] + pb[i];
  } else if (fast) {
    BcastStepper ma{pat_a}, mb{pat_b};
    for (std::size_t i = 0; i < n; ++i) {
      const T va = pa[ma.step()], vb = pb[mb.step()];
      out[i] = kMul ? va * vb : va + vb;
    }
  } else {
    for_each_bcast(oshape, a.shape, b.shape, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      out[i] = kMul ? pa[ia] * pb[ib] : pa[ia] + pb[ib];
    });
  }

  Tape<T>* tp = tape_of<T>({&a, &b});
  if (!tp) return Tensor<T>::constant(std::move(oshape), std::move(out));
  const int na = a.node, nb = b.node;
  auto ad = a.data, bd = b.data;
  const Shape sa = a.shape, sb = b.shape, so = oshape;
  return make_result<T>(
      tp, std::move(oshape), std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        std::vector<T>* ga = na >= 0 ? &t.grad_buf(na) : nullptr;
        std::vector<T>* gb = nb >= 0 ? &t.grad_buf(nb) : nullptr;
        if (fast) {
          BcastStepper ma{pat_a}, mb{pat_b};
          const T* av = ad->data();
          const T* bv = bd->data();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t ia = ma.step(), ib = mb.step();
            if constexpr (kMul) {
              if (ga) (*ga)[ia] += g[i] * bv[ib];
              if (gb) (*gb)[ib] += g[i] * av[ia];
            } else {
              if (ga) (*ga)[ia] += g[i];
              if (gb) (*gb)[ib] += g[i];
            }
          }
        } else {
          for_each_bcast(so, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            if constexpr (kMul) {
              if (ga) (*ga)[ia] += g[i] * (*bd)[ib];
              if (gb) (*gb)[ib] += g[i] * (*ad)[ia];
            } else {
              if (ga) (*ga)[ia] += g[i];
              if (gb) (*gb)[ib] += g[i];
            }
          });
        }
      });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_bcast<T, false>(a, b, "add");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_bcast<T, true>(a, b, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
  std::vector<T> out(x.size());
  const T cc = static_cast<T>(c);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.ptr()[i] * cc;
  Tape<T>* tp = detail::tape_of<T>({&x});
  if (!tp) return Tensor<T>::constant(x.shape, std::move(out));
  const int px = x.node;
  return detail::make_result<T>(tp, x.shape, std::move(out),
                                [px, cc](Tape<T>& t, const std::vector<T>& g) {
                                  auto& gx = t.grad_buf(px);
                                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * cc;
                                });
}

// ---- conv1d ------------------------------------------------------------

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                 std::size_t stride) {
  if (x.rank() != 3 || w.rank() != 3)
    throw ShapeError("conv1d: expects x [B,Cin,L] and w [Cout,Cin,K], got " +
                     shape_str(x.shape) + " and " + shape_str(w.shape));
  const std::size_t B = x.shape[0], Cin = x.shape[1], L = x.shape[2];
  const std::size_t Cout = w.shape[0], K = w.shape[2];
  if (w.shape[1] != Cin)
    throw ShapeError("conv1d: channel mismatch, x " + shape_str(x.shape) + " vs w " +
                     shape_str(w.shape));
  if (stride == 0) throw ShapeError("conv1d: stride must be >= 1");
  if (K > L)
    throw ShapeError("conv1d: kernel " + std::to_string(K) + " longer than input " +
                     std::to_string(L));
  if (bias && bias->shape != Shape{Cout})
    throw ShapeError("conv1d: bias " + shape_str(bias->shape) + " vs Cout " +
                     std::to_string(Cout));
  const std::size_t Lout = (L - K) / stride + 1;

  std::vector<T> out(B * Cout * Lout, T(0));
  const T* px = x.ptr();
  const T* pw = w.ptr();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Cout; ++co) {
      T* orow = out.data() + (b * Cout + co) * Lout;
      for (std::size_t lo = 0; lo < Lout; ++lo) {
        T s = bias ? bias->ptr()[co] : T(0);
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const T* xr = px + (b * Cin + ci) * L + lo * stride;
          const T* wr = pw + (co * Cin + ci) * K;
          for (std::size_t kk = 0; kk < K; ++kk) s += xr[kk] * wr[kk];
        }
        orow[lo] = s;
      }
    }

  Tape<T>* tp = bias ? detail::tape_of<T>({&x, &w, bias}) : detail::tape_of<T>({&x, &w});
  if (!tp) return Tensor<T>::constant({B, Cout, Lout}, std::move(out));
  const int nx = x.node, nw = w.node, nb = bias ? bias->node : -1;
  auto xd = x.data, wd = w.data;
  return detail::make_result<T>(
      tp, {B, Cout, Lout}, std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        std::vector<T>* gx = nx >= 0 ? &t.grad_buf(nx) : nullptr;
        std::vector<T>* gw = nw >= 0 ? &t.grad_buf(nw) : nullptr;
        std::vector<T>* gb = nb >= 0 ? &t.grad_buf(nb) : nullptr;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Cout; ++co) {
            const T* grow = g.data() + (b * Cout + co) * Lout;
            for (std::size_t lo = 0; lo < Lout; ++lo) {
              const T gv = grow[lo];
              if (gb) (*gb)[co] += gv;
              for (std::size_t ci = 0; ci < Cin; ++ci) {
                const std::size_t xoff = (b * Cin + ci) * L + lo * stride;
                const std::size_t woff = (co * Cin + ci) * K;
                for (std::size_t kk = 0; kk < K; ++kk) {
                  if (gx) (*gx)[xoff + kk] += gv * (*wd)[woff + kk];
                  if (gw) (*gw)[woff + kk] += gv * (*xd)[xoff + kk];
                }
              }
            }
          }
      });
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride) {
  return conv1d(x, w, &bias, stride);
}

// ---- layer_norm ----------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t D = x.shape.back();
  if (gamma.shape != Shape{D} || beta.shape != Shape{D})
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(D) + "], got " +
                     shape_str(gamma.shape) + " and " + shape_str(beta.shape));
  const std::size_t rows = x.size() / D;
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto istd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.size());
  const T* px = x.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * D;
    double mu = 0;
    for (std::size_t i = 0; i < D; ++i) mu += xr[i];
    mu /= static_cast<double>(D);
    double var = 0;
    for (std::size_t i = 0; i < D; ++i) {
      double d = xr[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(D);
    const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
    (*istd)[r] = is;
    T* hr = xhat->data() + r * D;
    T* orow = out.data() + r * D;
    for (std::size_t i = 0; i < D; ++i) {
      hr[i] = static_cast<T>((xr[i] - mu)) * is;
      orow[i] = hr[i] * gamma.ptr()[i] + beta.ptr()[i];
    }
  }

  Tape<T>* tp = detail::tape_of<T>({&x, &gamma, &beta});
  if (!tp) return Tensor<T>::constant(x.shape, std::move(out));
  const int nx = x.node, ng = gamma.node, nb = beta.node;
  auto gd = gamma.data;
  return detail::make_result<T>(
      tp, x.shape, std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        std::vector<T>* gx = nx >= 0 ? &t.grad_buf(nx) : nullptr;
        std::vector<T>* gg = ng >= 0 ? &t.grad_buf(ng) : nullptr;
        std::vector<T>* gb = nb >= 0 ? &t.grad_buf(nb) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * D;
          const T* hr = xhat->data() + r * D;
          if (gb)
            for (std::size_t i = 0; i < D; ++i) (*gb)[i] += gr[i];
          if (gg)
            for (std::size_t i = 0; i < D; ++i) (*gg)[i] += gr[i] * hr[i];
          if (gx) {
            double m1 = 0, m2 = 0;  // mean(gy*gamma), mean(gy*gamma*xhat)
            for (std::size_t i = 0; i < D; ++i) {
              double gh = static_cast<double>(gr[i]) * (*gd)[i];
              m1 += gh;
              m2 += gh * hr[i];
            }
            m1 /= static_cast<double>(D);
            m2 /= static_cast<double>(D);
            const T is = (*istd)[r];
            T* gxr = gx->data() + r * D;
            for (std::size_t i = 0; i < D; ++i) {
              double gh = static_cast<double>(gr[i]) * (*gd)[i];
              gxr[i] += is * static_cast<T>(gh - m1 - hr[i] * m2);
            }
          }
        }
      });
}

// ---- softmax (last axis; optional log mode) ------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, bool log_mode = false) {
  if (x.rank() < 1) throw ShapeError("softmax: rank-0 input");
  const std::size_t D = x.shape.back();
  const std::size_t rows = x.size() / D;
  auto y = std::make_shared<std::vector<T>>(x.size());
  const T* px = x.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * D;
    T* yr = y->data() + r * D;
    T mx = xr[0];
    for (std::size_t i = 1; i < D; ++i) mx = std::max(mx, xr[i]);
    double z = 0;
    for (std::size_t i = 0; i < D; ++i) z += static_cast<double>(std::exp(xr[i] - mx));
    if (log_mode) {
      const T lse = mx + static_cast<T>(std::log(z));
      for (std::size_t i = 0; i < D; ++i) yr[i] = xr[i] - lse;
    } else {
      const T iz = static_cast<T>(1.0 / z);
      for (std::size_t i = 0; i < D; ++i) yr[i] = std::exp(xr[i] - mx) * iz;
    }
  }
  Tensor<T> out(x.shape, y);  // saved activation aliases the output

  Tape<T>* tp = detail::tape_of<T>({&x});
  if (!tp) return out;
  out.tape = tp;
  const int nx = x.node;
  out.node = tp->add_node(
      x.shape, [=](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad_buf(nx);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * D;
          const T* yr = y->data() + r * D;
          T* gxr = gx.data() + r * D;
          if (log_mode) {
            double gs = 0;
            for (std::size_t i = 0; i < D; ++i) gs += gr[i];
            for (std::size_t i = 0; i < D; ++i)
              gxr[i] += gr[i] - std::exp(yr[i]) * static_cast<T>(gs);
          } else {
            double dot = 0;
            for (std::size_t i = 0; i < D; ++i) dot += static_cast<double>(gr[i]) * yr[i];
            for (std::size_t i = 0; i < D; ++i)
              gxr[i] += yr[i] * (gr[i] - static_cast<T>(dot));
          }
        }
      });
  return out;
}

// ---- pointwise nonlinearities ---------------------------------------------

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.ptr()[i];
    out[i] = v * T(0.5) * (T(1) + std::erf(v * static_cast<T>(kInvSqrt2)));
  }
  Tape<T>* tp = detail::tape_of<T>({&x});
  if (!tp) return Tensor<T>::constant(x.shape, std::move(out));
  const int nx = x.node;
  auto xd = x.data;
  return detail::make_result<T>(tp, x.shape, std::move(out),
                                [=](Tape<T>& t, const std::vector<T>& g) {
                                  auto& gx = t.grad_buf(nx);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    const T v = (*xd)[i];
                                    const T phi =
                                        T(0.5) * (T(1) + std::erf(v * static_cast<T>(kInvSqrt2)));
                                    const T pdf =
                                        static_cast<T>(kInvSqrt2Pi) * std::exp(T(-0.5) * v * v);
                                    gx[i] += g[i] * (phi + v * pdf);
                                  }
                                });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto y = std::make_shared<std::vector<T>>(x.size());
  for (std::size_t i = 0; i < y->size(); ++i)
    (*y)[i] = T(1) / (T(1) + std::exp(-x.ptr()[i]));
  Tensor<T> out(x.shape, y);
  Tape<T>* tp = detail::tape_of<T>({&x});
  if (!tp) return out;
  out.tape = tp;
  const int nx = x.node;
  out.node = tp->add_node(x.shape, [=](Tape<T>& t, const std::vector<T>& g) {
    auto& gx = t.grad_buf(nx);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T yv = (*y)[i];
      gx[i] += g[i] * yv * (T(1) - yv);
    }
  });
  return out;
}

// ---- mean_pool -------------------------------------------------------------

// axis = nullopt pools everything to a [1] scalar.
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x, std::optional<std::size_t> axis = std::nullopt) {
  Shape oshape;
  std::size_t outer = 1, mid = x.size(), inner = 1;
  if (axis) {
    if (*axis >= x.rank())
      throw ShapeError("mean_pool: axis " + std::to_string(*axis) + " out of range for " +
                       shape_str(x.shape));
    for (std::size_t i = 0; i < *axis; ++i) outer *= x.shape[i];
    mid = x.shape[*axis];
    for (std::size_t i = *axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    for (std::size_t i = 0; i < x.rank(); ++i)
      if (i != *axis) oshape.push_back(x.shape[i]);
    if (oshape.empty()) oshape = {1};
  } else {
    oshape = {1};
  }
  if (mid == 0) throw ShapeError("mean_pool: empty reduction axis");
  std::vector<T> out(outer * inner, T(0));
  const T* px = x.ptr();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t m = 0; m < mid; ++m) {
      const T* row = px + (o * mid + m) * inner;
      T* orow = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) orow[i] += row[i];
    }
  const T invm = static_cast<T>(1.0 / static_cast<double>(mid));
  for (auto& v : out) v *= invm;

  Tape<T>* tp = detail::tape_of<T>({&x});
  if (!tp) return Tensor<T>::constant(std::move(oshape), std::move(out));
  const int nx = x.node;
  return detail::make_result<T>(tp, std::move(oshape), std::move(out),
                                [=](Tape<T>& t, const std::vector<T>& g) {
                                  auto& gx = t.grad_buf(nx);
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t m = 0; m < mid; ++m) {
                                      T* row = gx.data() + (o * mid + m) * inner;
                                      const T* grow = g.data() + o * inner;
                                      for (std::size_t i = 0; i < inner; ++i)
                                        row[i] += grow[i] * invm;
                                    }
                                });
}

// sum = mean * n; provided as a composite since reductions share one kernel
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  return scale(mean_pool(x), static_cast<double>(x.size()));
}

// ---- concat -----------------------------------------------------------------

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = xs[0].rank();
  if (axis >= rank) throw ShapeError("concat: axis out of range");
  Shape oshape = xs[0].shape;
  std::size_t total = 0;
  for (const auto& t : xs) {
    if (t.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < rank; ++d)
      if (d != axis && t.shape[d] != oshape[d])
        throw ShapeError("concat: shape " + shape_str(t.shape) + " incompatible with " +
                         shape_str(oshape) + " on axis " + std::to_string(axis));
    total += t.shape[axis];
  }
  oshape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= oshape[d];
  for (std::size_t d = axis + 1; d < rank; ++d) inner *= oshape[d];

  std::vector<T> out(numel(oshape));
  std::vector<std::size_t> offs;  // per-input offset along axis
  {
    std::size_t off = 0;
    for (const auto& t : xs) {
      offs.push_back(off);
      const std::size_t mid = t.shape[axis];
      for (std::size_t o = 0; o < outer; ++o)
        std::copy(t.ptr() + o * mid * inner, t.ptr() + (o + 1) * mid * inner,
                  out.data() + (o * total + off) * inner);
      off += mid;
    }
  }

  std::vector<const Tensor<T>*> ptrs;
  for (const auto& t : xs) ptrs.push_back(&t);
  Tape<T>* tp = nullptr;
  for (auto* t : ptrs)
    if (t->recorded()) {
      if (tp && t->tape != tp) throw GraphError("concat: operands on different tapes");
      tp = t->tape;
    }
  if (!tp) return Tensor<T>::constant(std::move(oshape), std::move(out));
  std::vector<int> nodes;
  std::vector<std::size_t> mids;
  for (const auto& t : xs) {
    nodes.push_back(t.node);
    mids.push_back(t.shape[axis]);
  }
  return detail::make_result<T>(
      tp, std::move(oshape), std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i] < 0) continue;
          auto& gi = t.grad_buf(nodes[i]);
          const std::size_t mid = mids[i];
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = g.data() + (o * total + offs[i]) * inner;
            T* dst = gi.data() + o * mid * inner;
            for (std::size_t j = 0; j < mid * inner; ++j) dst[j] += src[j];
          }
        }
      });
}

// ---- index_select / scatter ---------------------------------------------------

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis,
                       const std::vector<std::int64_t>& idx) {
  if (axis >= x.rank()) throw ShapeError("index_select: axis out of range");
  const std::size_t dim = x.shape[axis];
  for (auto i : idx)
    if (i < 0 || static_cast<std::size_t>(i) >= dim)
      throw ShapeError("index_select: index " + std::to_string(i) + " out of range [0," +
                       std::to_string(dim) + ")");
  Shape oshape = x.shape;
  oshape[axis] = idx.size();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.shape[d];
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape[d];

  std::vector<T> out(numel(oshape));
  const T* px = x.ptr();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < idx.size(); ++j)
      std::copy(px + (o * dim + static_cast<std::size_t>(idx[j])) * inner,
                px + (o * dim + static_cast<std::size_t>(idx[j]) + 1) * inner,
                out.data() + (o * idx.size() + j) * inner);

  Tape<T>* tp = detail::tape_of<T>({&x});
  if (!tp) return Tensor<T>::constant(std::move(oshape), std::move(out));
  const int nx = x.node;
  const std::size_t m = idx.size();
  auto idx_copy = idx;
  return detail::make_result<T>(
      tp, std::move(oshape), std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad_buf(nx);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < m; ++j) {
            const T* src = g.data() + (o * m + j) * inner;
            T* dst = gx.data() + (o * dim + static_cast<std::size_t>(idx_copy[j])) * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
      });
}

// Row scatter along axis 0 with distinct indices: out = base; out[idx[j]] = upd[j].
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& base, const std::vector<std::int64_t>& idx,
                       const Tensor<T>& upd) {
  if (base.rank() < 1 || upd.rank() != base.rank())
    throw ShapeError("scatter: rank mismatch " + shape_str(base.shape) + " vs " +
                     shape_str(upd.shape));
  const std::size_t rows = base.shape[0];
  if (upd.shape[0] != idx.size())
    throw ShapeError("scatter: " + std::to_string(idx.size()) + " indices vs " +
                     std::to_string(upd.shape[0]) + " update rows");
  for (std::size_t d = 1; d < base.rank(); ++d)
    if (base.shape[d] != upd.shape[d])
      throw ShapeError("scatter: row shape mismatch " + shape_str(base.shape) + " vs " +
                       shape_str(upd.shape));
  std::vector<char> seen(rows, 0);
  for (auto i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= rows)
      throw ShapeError("scatter: index " + std::to_string(i) + " out of range");
    if (seen[static_cast<std::size_t>(i)]) throw ShapeError("scatter: duplicate index");
    seen[static_cast<std::size_t>(i)] = 1;
  }
  const std::size_t inner = base.size() / rows;
  std::vector<T> out(base.values());
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::copy(upd.ptr() + j * inner, upd.ptr() + (j + 1) * inner,
              out.data() + static_cast<std::size_t>(idx[j]) * inner);

  Tape<T>* tp = detail::tape_of<T>({&base, &upd});
  if (!tp) return Tensor<T>::constant(base.shape, std::move(out));
  const int nb = base.node, nu = upd.node;
  auto idx_copy = idx;
  return detail::make_result<T>(
      tp, base.shape, std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        if (nb >= 0) {
          auto& gb = t.grad_buf(nb);
          std::vector<char> hit(rows, 0);
          for (auto i : idx_copy) hit[static_cast<std::size_t>(i)] = 1;
          for (std::size_t r = 0; r < rows; ++r) {
            if (hit[r]) continue;
            const T* src = g.data() + r * inner;
            T* dst = gb.data() + r * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
        if (nu >= 0) {
          auto& gu = t.grad_buf(nu);
          for (std::size_t j = 0; j < idx_copy.size(); ++j) {
            const T* src = g.data() + static_cast<std::size_t>(idx_copy[j]) * inner;
            T* dst = gu.data() + j * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
      });
}

// ---- real FFT pair --------------------------------------------------------

// x [..., T] -> [..., K, 2] with K = floor(T/2)+1, interleaved (re, im).
template <typename T>
Tensor<T> rfft(const Tensor<T>& x) {
  if (x.rank() < 1 || x.shape.back() < 1) throw ShapeError("rfft: needs a non-empty last axis");
  const std::size_t t_len = x.shape.back();
  const std::size_t k = fftcore::rfft_bins(t_len);
  const std::size_t rows = x.size() / t_len;
  Shape oshape = x.shape;
  oshape.back() = k;
  oshape.push_back(2);
  std::vector<T> out(rows * k * 2);
  std::vector<double> buf(t_len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < t_len; ++i) buf[i] = static_cast<double>(x.ptr()[r * t_len + i]);
    auto spec = fftcore::rfft(buf.data(), t_len);
    for (std::size_t i = 0; i < 2 * k; ++i) out[r * 2 * k + i] = static_cast<T>(spec[i]);
  }
  Tape<T>* tp = detail::tape_of<T>({&x});
  if (!tp) return Tensor<T>::constant(std::move(oshape), std::move(out));
  const int nx = x.node;
  return detail::make_result<T>(
      tp, std::move(oshape), std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad_buf(nx);
        std::vector<double> gb(2 * k);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < 2 * k; ++i) gb[i] = static_cast<double>(g[r * 2 * k + i]);
          auto gr = fftcore::rfft_adjoint(gb.data(), k, t_len);
          for (std::size_t i = 0; i < t_len; ++i) gx[r * t_len + i] += static_cast<T>(gr[i]);
        }
      });
}

// x [..., K, 2] -> [..., T]; imaginary parts of DC/Nyquist are ignored.
template <typename T>
Tensor<T> irfft(const Tensor<T>& x, std::size_t t_len) {
  if (x.rank() < 2 || x.shape.back() != 2)
    throw ShapeError("irfft: expects [..., K, 2] spectrum, got " + shape_str(x.shape));
  const std::size_t k = x.shape[x.rank() - 2];
  if (k != fftcore::rfft_bins(t_len))
    throw ShapeError("irfft: K=" + std::to_string(k) + " incompatible with T=" +
                     std::to_string(t_len) + " (need floor(T/2)+1)");
  const std::size_t rows = x.size() / (2 * k);
  Shape oshape(x.shape.begin(), x.shape.end() - 2);
  oshape.push_back(t_len);
  std::vector<T> out(rows * t_len);
  std::vector<double> buf(2 * k);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < 2 * k; ++i) buf[i] = static_cast<double>(x.ptr()[r * 2 * k + i]);
    auto sig = fftcore::irfft(buf.data(), k, t_len);
    for (std::size_t i = 0; i < t_len; ++i) out[r * t_len + i] = static_cast<T>(sig[i]);
  }
  Tape<T>* tp = detail::tape_of<T>({&x});
  if (!tp) return Tensor<T>::constant(std::move(oshape), std::move(out));
  const int nx = x.node;
  return detail::make_result<T>(
      tp, std::move(oshape), std::move(out), [=](Tape<T>& t, const std::vector<T>& g) {
        auto& gx = t.grad_buf(nx);
        std::vector<double> gb(t_len);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < t_len; ++i) gb[i] = static_cast<double>(g[r * t_len + i]);
          auto gs = fftcore::irfft_adjoint(gb.data(), t_len, k);
          for (std::size_t i = 0; i < 2 * k; ++i) gx[r * 2 * k + i] += static_cast<T>(gs[i]);
        }
      });
}

// ---- cosine similarity ------------------------------------------------------

// a [Ba,D], b [Bb,D] -> all-pairs cosine matrix [Ba,Bb].
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
    throw ShapeError("cosine_similarity: expects [Ba,D] x [Bb,D], got " + shape_str(a.shape) +
                     " and " + shape_str(b.shape));
  const std::size_t Ba = a.shape[0], Bb = b.shape[0], D = a.shape[1];
  auto ahat = std::make_shared<std::vector<T>>(a.values());
  auto bhat = std::make_shared<std::vector<T>>(b.values());
  auto na = std::make_shared<std::vector<T>>(Ba);
  auto nb = std::make_shared<std::vector<T>>(Bb);
  auto normalize = [](std::vector<T>& v, std::vector<T>& norms, std::size_t n, std::size_t d,
                      const char* side) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(v[i * d + j]) * v[i * d + j];
      double nrm = std::sqrt(s);
      if (nrm == 0.0)
        throw NumericError(std::string("cosine_similarity: zero-norm embedding in ") + side +
                           " row " + std::to_string(i));
      norms[i] = static_cast<T>(nrm);
      const T inv = static_cast<T>(1.0 / nrm);
      for (std::size_t j = 0; j < d; ++j) v[i * d + j] *= inv;
    }
  };
  normalize(*ahat, *na, Ba, D, "left");
  normalize(*bhat, *nb, Bb, D, "right");
  auto sim = std::make_shared<std::vector<T>>(Ba * Bb, T(0));
  detail::mm_acc(ahat->data(), Ba, D, false, bhat->data(), Bb, true, sim->data());
  Tensor<T> out({Ba, Bb}, sim);

  Tape<T>* tp = detail::tape_of<T>({&a, &b});
  if (!tp) return out;
  out.tape = tp;
  const int pa = a.node, pb = b.node;
  out.node = tp->add_node(
      Shape{Ba, Bb}, [=](Tape<T>& t, const std::vector<T>& g) {
        if (pa >= 0) {
          auto& ga = t.grad_buf(pa);
          std::vector<T> u(Ba * D, T(0));  // g * bhat
          detail::mm_acc(g.data(), Ba, Bb, false, bhat->data(), D, false, u.data());
          for (std::size_t i = 0; i < Ba; ++i) {
            double c = 0;
            for (std::size_t j = 0; j < Bb; ++j)
              c += static_cast<double>(g[i * Bb + j]) * (*sim)[i * Bb + j];
            const T inv = static_cast<T>(1.0 / (*na)[i]);
            for (std::size_t d = 0; d < D; ++d)
              ga[i * D + d] +=
                  (u[i * D + d] - static_cast<T>(c) * (*ahat)[i * D + d]) * inv;
          }
        }
        if (pb >= 0) {
          auto& gb = t.grad_buf(pb);
          std::vector<T> v(Bb * D, T(0));  // g^T * ahat
          detail::mm_acc(g.data(), Bb, Ba, true, ahat->data(), D, false, v.data());
          for (std::size_t j = 0; j < Bb; ++j) {
            double c = 0;
            for (std::size_t i = 0; i < Ba; ++i)
              c += static_cast<double>(g[i * Bb + j]) * (*sim)[i * Bb + j];
            const T inv = static_cast<T>(1.0 / (*nb)[j]);
            for (std::size_t d = 0; d < D; ++d)
              gb[j * D + d] +=
                  (v[j * D + d] - static_cast<T>(c) * (*bhat)[j * D + d]) * inv;
          }
        }
      });
  return out;
}

}  // namespace coreecg
