#pragma once

// Dynamic primitive dispatch and the finite-difference gradient harness.
// apply_primitive is the uniform entry point used by the gradcheck CLI and
// the verification sweep; typed ops in ops.hpp are what the model code calls.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "coreecg/ops.hpp"

namespace coreecg {

enum class PrimKind {
  matmul,
  add,
  mul,
  conv1d,
  layer_norm,
  softmax,
  gelu,
  sigmoid,
  mean_pool,
  concat,
  index_select,
  scatter,
  rfft,
  irfft,
  cosine_similarity,
  scale,
};

inline const std::vector<std::pair<PrimKind, const char*>>& prim_table() {
  static const std::vector<std::pair<PrimKind, const char*>> tbl = {
      {PrimKind::matmul, "matmul"},
      {PrimKind::add, "add"},
      {PrimKind::mul, "mul"},
      {PrimKind::conv1d, "conv1d"},
      {PrimKind::layer_norm, "layer_norm"},
      {PrimKind::softmax, "softmax"},
      {PrimKind::gelu, "gelu"},
      {PrimKind::sigmoid, "sigmoid"},
      {PrimKind::mean_pool, "mean_pool"},
      {PrimKind::concat, "concat"},
      {PrimKind::index_select, "index_select"},
      {PrimKind::scatter, "scatter"},
      {PrimKind::rfft, "rfft"},
      {PrimKind::irfft, "irfft"},
      {PrimKind::cosine_similarity, "cosine_similarity"},
      {PrimKind::scale, "scale"},
  };
  return tbl;
}

inline const char* prim_name(PrimKind k) {
  for (const auto& [kind, name] : prim_table())
    if (kind == k) return name;
  return "?";
}

inline PrimKind prim_from_name(const std::string& s) {
  for (const auto& [kind, name] : prim_table())
    if (s == name) return kind;
  throw ConfigError("unknown primitive: " + s);
}

// Key-value attributes for apply_primitive.
struct Attrs {
  std::map<std::string, double> num;
  std::map<std::string, std::vector<std::int64_t>> ivec;

  double get_num(const std::string& k, double dflt) const {
    auto it = num.find(k);
    return it == num.end() ? dflt : it->second;
  }
  bool get_flag(const std::string& k, bool dflt = false) const {
    return get_num(k, dflt ? 1 : 0) != 0;
  }
  std::optional<std::int64_t> get_int(const std::string& k) const {
    auto it = num.find(k);
    if (it == num.end()) return std::nullopt;
    return static_cast<std::int64_t>(it->second);
  }
  const std::vector<std::int64_t>* get_ivec(const std::string& k) const {
    auto it = ivec.find(k);
    return it == ivec.end() ? nullptr : &it->second;
  }
};

namespace detail {
template <typename T>
void expect_arity(PrimKind k, const std::vector<Tensor<T>>& in, std::size_t lo, std::size_t hi) {
  if (in.size() < lo || in.size() > hi)
    throw ShapeError(std::string(prim_name(k)) + ": expects " + std::to_string(lo) +
                     (hi != lo ? ".." + std::to_string(hi) : "") + " inputs, got " +
                     std::to_string(in.size()));
}
}  // namespace detail

template <typename T>
Tensor<T> apply_primitive(PrimKind kind, const std::vector<Tensor<T>>& in, const Attrs& attrs) {
  using detail::expect_arity;
  switch (kind) {
    case PrimKind::matmul:
      expect_arity(kind, in, 2, 2);
      return matmul(in[0], in[1], attrs.get_flag("transpose_a"), attrs.get_flag("transpose_b"));
    case PrimKind::add:
      expect_arity(kind, in, 2, 2);
      return add(in[0], in[1]);
    case PrimKind::mul:
      expect_arity(kind, in, 2, 2);
      return mul(in[0], in[1]);
    case PrimKind::conv1d: {
      expect_arity(kind, in, 2, 3);
      auto stride = static_cast<std::size_t>(attrs.get_num("stride", 1));
      return in.size() == 3 ? conv1d(in[0], in[1], &in[2], stride)
                            : conv1d<T>(in[0], in[1], nullptr, stride);
    }
    case PrimKind::layer_norm:
      expect_arity(kind, in, 3, 3);
      return layer_norm(in[0], in[1], in[2], attrs.get_num("eps", 1e-5));
    case PrimKind::softmax:
      expect_arity(kind, in, 1, 1);
      return softmax(in[0], attrs.get_flag("log"));
    case PrimKind::gelu:
      expect_arity(kind, in, 1, 1);
      return gelu(in[0]);
    case PrimKind::sigmoid:
      expect_arity(kind, in, 1, 1);
      return sigmoid(in[0]);
    case PrimKind::mean_pool: {
      expect_arity(kind, in, 1, 1);
      std::optional<std::size_t> axis;
      if (auto a = attrs.get_int("axis")) axis = static_cast<std::size_t>(*a);
      return mean_pool(in[0], axis);
    }
    case PrimKind::concat:
      return concat(in, static_cast<std::size_t>(attrs.get_num("axis", 0)));
    case PrimKind::index_select: {
      expect_arity(kind, in, 1, 1);
      const auto* idx = attrs.get_ivec("indices");
      if (!idx) throw ShapeError("index_select: missing 'indices' attr");
      return index_select(in[0], static_cast<std::size_t>(attrs.get_num("axis", 0)), *idx);
    }
    case PrimKind::scatter: {
      expect_arity(kind, in, 2, 2);
      const auto* idx = attrs.get_ivec("indices");
      if (!idx) throw ShapeError("scatter: missing 'indices' attr");
      return scatter_rows(in[0], *idx, in[1]);
    }
    case PrimKind::rfft:
      expect_arity(kind, in, 1, 1);
      return rfft(in[0]);
    case PrimKind::irfft: {
      expect_arity(kind, in, 1, 1);
      auto len = attrs.get_int("length");
      if (!len) throw ShapeError("irfft: missing 'length' attr");
      return irfft(in[0], static_cast<std::size_t>(*len));
    }
    case PrimKind::cosine_similarity:
      expect_arity(kind, in, 2, 2);
      return cosine_similarity(in[0], in[1]);
    case PrimKind::scale:
      expect_arity(kind, in, 1, 1);
      return scale(in[0], attrs.get_num("factor", 1.0));
  }
  throw ConfigError("apply_primitive: unhandled kind");
}

// ---- gradient checking -------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
};

// Representative shapes for each primitive, used by the gradcheck CLI and the
// per-primitive verification sweep.
inline std::vector<Shape> default_gradcheck_shapes(PrimKind k) {
  switch (k) {
    case PrimKind::matmul: return {{4, 3}, {3, 2}};
    case PrimKind::add: return {{2, 3}, {2, 3}};
    case PrimKind::mul: return {{3, 4}, {3, 4}};
    case PrimKind::conv1d: return {{2, 3, 8}, {4, 3, 3}, {4}};
    case PrimKind::layer_norm: return {{6, 16}, {16}, {16}};
    case PrimKind::softmax: return {{5, 7}};
    case PrimKind::gelu: return {{32}};
    case PrimKind::sigmoid: return {{17}};
    case PrimKind::mean_pool: return {{4, 6}};
    case PrimKind::concat: return {{2, 3}, {2, 3}};
    case PrimKind::index_select: return {{5, 4}};
    case PrimKind::scatter: return {{6, 3}, {2, 3}};
    case PrimKind::rfft: return {{2, 12}};
    case PrimKind::irfft: return {{2, 7, 2}};
    case PrimKind::cosine_similarity: return {{3, 5}, {4, 5}};
    case PrimKind::scale: return {{9}};
  }
  return {};
}

// Central finite differences (step 1e-5, float64) against the tape gradient.
// The output is probed with a fixed random covector so the whole Jacobian is
// exercised, not just its row sums.
inline GradCheckReport grad_check(PrimKind kind, const std::vector<Shape>& shapes, double tol,
                                  std::uint64_t seed, const Attrs* attrs_in = nullptr) {
  Rng rng(derive_seed(seed, "gradcheck", static_cast<std::uint64_t>(kind)));
  Attrs attrs = attrs_in ? *attrs_in : Attrs{};
  // Derived attrs for kinds that need index/length metadata.
  if (kind == PrimKind::index_select && !attrs.get_ivec("indices")) {
    std::size_t axis = static_cast<std::size_t>(attrs.get_num("axis", 0));
    std::size_t dim = shapes.at(0).at(axis);
    std::vector<std::int64_t> idx(dim);
    for (auto& v : idx) v = static_cast<std::int64_t>(rng.uniform_int(dim));
    attrs.ivec["indices"] = idx;
  }
  if (kind == PrimKind::scatter && !attrs.get_ivec("indices")) {
    auto rows = rng.k_subset(shapes.at(0).at(0), shapes.at(1).at(0));
    std::vector<std::int64_t> idx(rows.begin(), rows.end());
    attrs.ivec["indices"] = idx;
  }
  if (kind == PrimKind::irfft && !attrs.get_int("length")) {
    const Shape& s = shapes.at(0);
    attrs.num["length"] = static_cast<double>(2 * (s[s.size() - 2] - 1));
  }

  std::vector<std::vector<double>> base;
  for (const auto& s : shapes) {
    std::vector<double> v(numel(s));
    for (auto& x : v) x = rng.normal() * 0.8 + 0.1;
    base.push_back(std::move(v));
  }

  auto eval_scalar = [&](const std::vector<std::vector<double>>& vals,
                         const std::vector<double>& probe) {
    std::vector<Tensor<double>> in;
    for (std::size_t i = 0; i < shapes.size(); ++i)
      in.push_back(Tensor<double>::constant(shapes[i], vals[i]));
    Tensor<double> out = apply_primitive(kind, in, attrs);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.ptr()[i] * probe[i];
    return s;
  };

  // Analytic gradient.
  Tape<double> tape;
  std::vector<Tensor<double>> in;
  for (std::size_t i = 0; i < shapes.size(); ++i) in.push_back(tape.leaf(shapes[i], base[i]));
  Tensor<double> out = apply_primitive(kind, in, attrs);
  std::vector<double> probe(out.size());
  Rng prng(derive_seed(seed, "probe", static_cast<std::uint64_t>(kind)));
  for (auto& v : probe) v = prng.normal();
  tape.backward_seeded({{&out, &probe}});

  GradCheckReport rep;
  const double h = 1e-5;
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    const std::vector<double>* g = tape.grad(in[t]);
    for (std::size_t e = 0; e < base[t].size(); ++e) {
      auto vals = base;
      vals[t][e] = base[t][e] + h;
      double sp = eval_scalar(vals, probe);
      vals[t][e] = base[t][e] - h;
      double sm = eval_scalar(vals, probe);
      double fd = (sp - sm) / (2 * h);
      double an = g ? (*g)[e] : 0.0;
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
    }
  }
  rep.pass = rep.max_rel_err <= tol;
  return rep;
}

}  // namespace coreecg
