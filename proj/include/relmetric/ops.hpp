#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "relmetric/error.hpp"
#include "relmetric/log.hpp"
#include "relmetric/tape.hpp"
#include "relmetric/tensor.hpp"

// Differentiable primitives. Every function records one node on the tape of
// its first argument and supplies the matching backward closure.
namespace relmetric::ops {

enum class Mode { train, infer };

namespace detail {

inline Tape& tape_of(Var v) {
  if (!v.tape) throw ContractError("ops: variable is not attached to a tape");
  return *v.tape;
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

// out[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * k + p];
      if (av == Real{0}) continue;
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * n + j] += acc;
    }
  }
}

// out[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * k + p];
      if (av == Real{0}) continue;
      Real* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

inline Real sigmoid(Real x) { return Real{1} / (Real{1} + std::exp(-x)); }

}  // namespace detail

inline Var add(Var a, Var b) {
  Tape& tape = detail::tape_of(a);
  const Tensor& av = tape.value(a);
  av.require_same_shape(tape.value(b), "add");
  Tensor out = av;
  out += tape.value(b);
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) *ga += g;
    if (Tensor* gb = t.grad_buffer(b)) *gb += g;
  });
}

inline Var scale(Var a, Real s) {
  Tape& tape = detail::tape_of(a);
  Tensor out = tape.value(a);
  out *= s;
  return tape.record(std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

inline Var sum(Var a) {
  Tape& tape = detail::tape_of(a);
  const Tensor& av = tape.value(a);
  Real total = 0;
  for (Real v : av.values()) total += v;
  return tape.record(Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (Real& v : ga->values()) v += g[0];
    }
  });
}

// [m x k] * [k x n]
inline Var matmul(Var a, Var b) {
  Tape& tape = detail::tape_of(a);
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  detail::require_rank(av, 2, "matmul");
  detail::require_rank(bv, 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out({m, n});
  detail::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) detail::gemm_nt(g.data(), t.value(b).data(), ga->data(), m, n, k);
    if (Tensor* gb = t.grad_buffer(b)) detail::gemm_tn(t.value(a).data(), g.data(), gb->data(), m, k, n);
  });
}

// Adds a length-n bias to every row of an m x n matrix.
inline Var add_row_bias(Var a, Var bias) {
  Tape& tape = detail::tape_of(a);
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(bias);
  detail::require_rank(av, 2, "add_row_bias");
  const std::size_t m = av.dim(0), n = av.dim(1);
  if (bv.size() != n) throw ShapeError("add_row_bias: bias length mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  return tape.record(std::move(out), {a, bias}, [a, bias, m, n](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) *ga += g;
    if (Tensor* gb = t.grad_buffer(bias)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g.at(i, j);
    }
  });
}

inline Var relu(Var a) {
  Tape& tape = detail::tape_of(a);
  Tensor out = tape.value(a);
  for (Real& v : out.values()) v = std::max(v, Real{0});
  return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      const Tensor& x = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > Real{0}) (*ga)[i] += g[i];
    }
  });
}

// Concatenates tensors along their last axis; all leading dims must agree.
inline Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_last: no inputs");
  Tape& tape = detail::tape_of(parts.front());
  const Shape lead(tape.value(parts[0]).shape().begin(), tape.value(parts[0]).shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = tape.value(p);
    const Shape pl(v.shape().begin(), v.shape().end() - 1);
    if (pl != lead) {
      throw ShapeError("concat_last: leading shape " + shape_string(pl) + " vs " + shape_string(lead));
    }
    widths.push_back(v.shape().back());
    total += v.shape().back();
  }
  const std::size_t rows = shape_size(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = tape.value(parts[p]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[p], widths[p], out.data() + r * total + offset);
    offset += widths[p];
  }
  return tape.record(std::move(out), parts, [parts, widths, rows, total](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (Tensor* gp = t.grad_buffer(parts[p])) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[p]; ++c) (*gp)[r * widths[p] + c] += g[r * total + off + c];
      }
      off += widths[p];
    }
  });
}

// Stacks matrices (or vectors treated as 1 x d rows) along the first axis.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& tape = detail::tape_of(parts.front());
  const std::size_t width = tape.value(parts[0]).shape().back();
  std::size_t rows = 0;
  std::vector<std::size_t> counts;
  for (const Var& p : parts) {
    const Tensor& v = tape.value(p);
    if (v.shape().back() != width) throw ShapeError("concat_rows: width mismatch");
    counts.push_back(v.size() / width);
    rows += counts.back();
  }
  Tensor out({rows, width});
  std::size_t at = 0;
  for (const Var& p : parts) {
    const Tensor& v = tape.value(p);
    std::copy(v.values().begin(), v.values().end(), out.data() + at);
    at += v.size();
  }
  return tape.record(std::move(out), parts, [parts](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t len = t.value(p).size();
      if (Tensor* gp = t.grad_buffer(p))
        for (std::size_t i = 0; i < len; ++i) (*gp)[i] += g[off + i];
      off += len;
    }
  });
}

// Embedding lookup. Backward touches only the gathered rows.
inline Var gather_rows(Var table, std::vector<std::size_t> indices) {
  Tape& tape = detail::tape_of(table);
  const Tensor& tv = tape.value(table);
  detail::require_rank(tv, 2, "gather_rows");
  const std::size_t width = tv.dim(1);
  Tensor out({indices.size(), width});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.dim(0)) {
      throw ContractError("gather_rows: index " + std::to_string(indices[r]) + " out of range " +
                          std::to_string(tv.dim(0)));
    }
    std::copy_n(tv.data() + indices[r] * width, width, out.data() + r * width);
  }
  return tape.record(std::move(out), {table},
                     [table, indices = std::move(indices), width](Tape& t, const Tensor& g) {
                       Tensor* gt = t.grad_buffer(table);
                       if (!gt) return;
                       for (std::size_t r = 0; r < indices.size(); ++r)
                         for (std::size_t c = 0; c < width; ++c)
                           (*gt)[indices[r] * width + c] += g[r * width + c];
                     });
}

// Inverted dropout: survivors are scaled by 1/(1-rate) so inference is identity.
inline Var dropout(Var a, Real rate, Mode mode, std::mt19937_64& rng) {
  if (!(rate >= Real{0} && rate < Real{1})) {
    throw ContractError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::infer || rate == Real{0}) return a;
  Tape& tape = detail::tape_of(a);
  const Tensor& av = tape.value(a);
  Tensor mask = Tensor::zeros_like(av);
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const Real survivor = Real{1} / (Real{1} - rate);
  for (Real& m : mask.values()) m = keep(rng) ? survivor : Real{0};
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return tape.record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * mask[i];
  });
}

// Valid 1-D convolution over the rows of x [L x c] with filters packed as
// [window*c x v]; output [(L-window+1) x v].
inline Var conv1d_valid(Var x, Var filters, Var bias, std::size_t window) {
  Tape& tape = detail::tape_of(x);
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(filters);
  detail::require_rank(xv, 2, "conv1d_valid");
  const std::size_t len = xv.dim(0), c = xv.dim(1);
  if (len < window) throw ShapeError("conv1d_valid: sequence shorter than window");
  if (wv.rank() != 2 || wv.dim(0) != window * c) throw ShapeError("conv1d_valid: filter shape mismatch");
  const std::size_t v = wv.dim(1);
  if (tape.value(bias).size() != v) throw ShapeError("conv1d_valid: bias length mismatch");
  const std::size_t out_len = len - window + 1;
  Tensor out({out_len, v});
  for (std::size_t p = 0; p < out_len; ++p) {
    std::copy_n(tape.value(bias).data(), v, out.data() + p * v);
    // the window rows are contiguous in x, so one gemm row does the whole window
    detail::gemm_nn(xv.data() + p * c, wv.data(), out.data() + p * v, 1, window * c, v);
  }
  return tape.record(std::move(out), {x, filters, bias},
                     [x, filters, bias, out_len, c, v, window](Tape& t, const Tensor& g) {
                       const Tensor& xv2 = t.value(x);
                       const Tensor& wv2 = t.value(filters);
                       Tensor* gx = t.grad_buffer(x);
                       Tensor* gw = t.grad_buffer(filters);
                       Tensor* gb = t.grad_buffer(bias);
                       for (std::size_t p = 0; p < out_len; ++p) {
                         const Real* gp = g.data() + p * v;
                         if (gx) detail::gemm_nt(gp, wv2.data(), gx->data() + p * c, 1, v, window * c);
                         if (gw) detail::gemm_tn(xv2.data() + p * c, gp, gw->data(), 1, window * c, v);
                         if (gb)
                           for (std::size_t k = 0; k < v; ++k) (*gb)[k] += gp[k];
                       }
                     });
}

// Column-wise max over rows: [L x v] -> [1 x v]. Ties route the gradient to
// the first maximal row.
inline Var max_rows(Var x) {
  Tape& tape = detail::tape_of(x);
  const Tensor& xv = tape.value(x);
  detail::require_rank(xv, 2, "max_rows");
  const std::size_t len = xv.dim(0), v = xv.dim(1);
  if (len == 0) throw ShapeError("max_rows: empty input");
  Tensor out({1, v});
  std::vector<std::size_t> arg(v, 0);
  for (std::size_t k = 0; k < v; ++k) {
    Real best = xv.at(0, k);
    for (std::size_t p = 1; p < len; ++p)
      if (xv.at(p, k) > best) best = xv.at(p, k), arg[k] = p;
    out[k] = best;
  }
  return tape.record(std::move(out), {x}, [x, arg = std::move(arg), v](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_buffer(x))
      for (std::size_t k = 0; k < v; ++k) gx->at(arg[k], k) += g[k];
  });
}

// Single-direction LSTM over the rows of x [n x in]. Gate blocks in the packed
// weights are ordered input, forget, cell, output. With `reverse`, the cell
// reads rows n-1..0 and output row t is the state after consuming row t.
inline Var lstm(Var x, Var w_in, Var w_rec, Var bias, bool reverse) {
  Tape& tape = detail::tape_of(x);
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w_in);
  const Tensor& uv = tape.value(w_rec);
  detail::require_rank(xv, 2, "lstm");
  const std::size_t n = xv.dim(0), in = xv.dim(1);
  if (wv.rank() != 2 || wv.dim(0) != in || wv.dim(1) % 4 != 0) throw ShapeError("lstm: input weight shape");
  const std::size_t h = wv.dim(1) / 4;
  if (uv.rank() != 2 || uv.dim(0) != h || uv.dim(1) != 4 * h) throw ShapeError("lstm: recurrent weight shape");
  if (tape.value(bias).size() != 4 * h) throw ShapeError("lstm: bias length");

  // Cache per step: activated gates [n x 4h], cell [n x h], tanh(cell) [n x h].
  Tensor gates({n, 4 * h});
  Tensor cell({n, h});
  Tensor cell_tanh({n, h});
  Tensor out({n, h});
  std::vector<Real> z(4 * h);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = reverse ? n - 1 - s : s;
    std::copy_n(tape.value(bias).data(), 4 * h, z.data());
    detail::gemm_nn(xv.data() + t * in, wv.data(), z.data(), 1, in, 4 * h);
    const Real* c_prev = nullptr;
    if (s > 0) {
      const std::size_t prev = reverse ? t + 1 : t - 1;
      detail::gemm_nn(out.data() + prev * h, uv.data(), z.data(), 1, h, 4 * h);
      c_prev = cell.data() + prev * h;
    }
    Real* gt = gates.data() + t * 4 * h;
    for (std::size_t j = 0; j < h; ++j) {
      const Real ig = detail::sigmoid(z[j]);
      const Real fg = detail::sigmoid(z[h + j]);
      const Real cg = std::tanh(z[2 * h + j]);
      const Real og = detail::sigmoid(z[3 * h + j]);
      gt[j] = ig, gt[h + j] = fg, gt[2 * h + j] = cg, gt[3 * h + j] = og;
      const Real c = (c_prev ? fg * c_prev[j] : Real{0}) + ig * cg;
      cell.at(t, j) = c;
      cell_tanh.at(t, j) = std::tanh(c);
      out.at(t, j) = og * cell_tanh.at(t, j);
    }
  }
  return tape.record(
      std::move(out), {x, w_in, w_rec, bias},
      [x, w_in, w_rec, bias, n, in, h, reverse, gates = std::move(gates), cell = std::move(cell),
       cell_tanh = std::move(cell_tanh)](Tape& t, const Tensor& g) {
        const Tensor& xv2 = t.value(x);
        const Tensor& wv2 = t.value(w_in);
        const Tensor& uv2 = t.value(w_rec);
        Tensor* gx = t.grad_buffer(x);
        Tensor* gw = t.grad_buffer(w_in);
        Tensor* gu = t.grad_buffer(w_rec);
        Tensor* gb = t.grad_buffer(bias);
        std::vector<Real> dh_next(h, 0), dc_next(h, 0), dz(4 * h), hprev(h);
        for (std::size_t s = n; s-- > 0;) {
          const std::size_t tt = reverse ? n - 1 - s : s;
          const bool has_prev = s > 0;
          const std::size_t prev = reverse ? tt + 1 : tt - 1;
          const Real* gt = gates.data() + tt * 4 * h;
          for (std::size_t j = 0; j < h; ++j) {
            const Real ig = gt[j], fg = gt[h + j], cg = gt[2 * h + j], og = gt[3 * h + j];
            const Real dh = g.at(tt, j) + dh_next[j];
            const Real tc = cell_tanh.at(tt, j);
            const Real dc = dh * og * (Real{1} - tc * tc) + dc_next[j];
            const Real cp = has_prev ? cell.at(prev, j) : Real{0};
            dz[j] = dc * cg * ig * (Real{1} - ig);
            dz[h + j] = dc * cp * fg * (Real{1} - fg);
            dz[2 * h + j] = dc * ig * (Real{1} - cg * cg);
            dz[3 * h + j] = dh * tc * og * (Real{1} - og);
            dc_next[j] = dc * fg;
          }
          if (gx) detail::gemm_nt(dz.data(), wv2.data(), gx->data() + tt * in, 1, 4 * h, in);
          if (gw) detail::gemm_tn(xv2.data() + tt * in, dz.data(), gw->data(), 1, in, 4 * h);
          if (gb)
            for (std::size_t j = 0; j < 4 * h; ++j) (*gb)[j] += dz[j];
          std::fill(dh_next.begin(), dh_next.end(), Real{0});
          if (has_prev) {
            // h_prev = o * tanh(c) at the previous step, recomputed from the cache
            const Real* gp = gates.data() + prev * 4 * h;
            for (std::size_t j = 0; j < h; ++j) hprev[j] = gp[3 * h + j] * cell_tanh.at(prev, j);
            if (gu) detail::gemm_tn(hprev.data(), dz.data(), gu->data(), 1, h, 4 * h);
            detail::gemm_nt(dz.data(), uv2.data(), dh_next.data(), 1, 4 * h, h);
          }
        }
      });
}

// G[i,j,k] = h_i^T R_k h_j for H [n x rho] and a metric bank R [kappa x rho x rho].
inline Var bilinear_tables(Var hidden, Var metrics) {
  Tape& tape = detail::tape_of(hidden);
  const Tensor& hv = tape.value(hidden);
  const Tensor& rv = tape.value(metrics);
  detail::require_rank(hv, 2, "bilinear_tables");
  const std::size_t n = hv.dim(0), rho = hv.dim(1);
  if (rv.rank() != 3 || rv.dim(1) != rho || rv.dim(2) != rho) {
    throw ShapeError("bilinear_tables: context width " + std::to_string(rho) +
                     " does not match metric bank " + shape_string(rv.shape()));
  }
  const std::size_t kappa = rv.dim(0);
  // projected[k] = H R_k, kept for the backward pass
  Tensor projected({kappa, n, rho});
  Tensor out({n, n, kappa});
  std::vector<Real> g(n * n);
  for (std::size_t k = 0; k < kappa; ++k) {
    Real* mk = projected.data() + k * n * rho;
    detail::gemm_nn(hv.data(), rv.data() + k * rho * rho, mk, n, rho, rho);
    std::fill(g.begin(), g.end(), Real{0});
    detail::gemm_nt(mk, hv.data(), g.data(), n, rho, n);
    for (std::size_t c = 0; c < n * n; ++c) out[c * kappa + k] = g[c];
  }
  return tape.record(std::move(out), {hidden, metrics},
                     [hidden, metrics, n, rho, kappa, projected = std::move(projected)](Tape& t, const Tensor& g) {
                       const Tensor& hv2 = t.value(hidden);
                       const Tensor& rv2 = t.value(metrics);
                       Tensor* gh = t.grad_buffer(hidden);
                       Tensor* gr = t.grad_buffer(metrics);
                       std::vector<Real> gk(n * n), dm(n * rho);
                       for (std::size_t k = 0; k < kappa; ++k) {
                         for (std::size_t c = 0; c < n * n; ++c) gk[c] = g[c * kappa + k];
                         const Real* mk = projected.data() + k * n * rho;
                         // dM_k = dG_k H
                         std::fill(dm.begin(), dm.end(), Real{0});
                         detail::gemm_nn(gk.data(), hv2.data(), dm.data(), n, n, rho);
                         if (gh) {
                           // through the right operand: dH += dG_k^T M_k
                           detail::gemm_tn(gk.data(), mk, gh->data(), n, n, rho);
                           // through the left operand: dH += dM_k R_k^T
                           detail::gemm_nt(dm.data(), rv2.data() + k * rho * rho, gh->data(), n, rho, rho);
                         }
                         if (gr) detail::gemm_tn(hv2.data(), dm.data(), gr->data() + k * rho * rho, n, rho, rho);
                       }
                     });
}

struct DepEdge {
  std::size_t head = 0;
  std::size_t dependent = 0;
  std::size_t tag = 0;
};

// Undirected dependency table: D[i,j] = D[j,i] = F[tag] for an edge between
// i and j, the null vector everywhere else.
inline Var dependency_table(Var tag_embeddings, Var null_vector, const std::vector<DepEdge>& edges,
                            std::size_t n) {
  Tape& tape = detail::tape_of(tag_embeddings);
  const Tensor& fv = tape.value(tag_embeddings);
  const Tensor& phi = tape.value(null_vector);
  detail::require_rank(fv, 2, "dependency_table");
  const std::size_t beta = fv.dim(1);
  if (phi.size() != beta) throw ShapeError("dependency_table: null vector length mismatch");
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> cell_tag(n * n, none);
  for (const DepEdge& e : edges) {
    if (e.head >= n || e.dependent >= n) {
      throw ContractError("dependency_table: edge (" + std::to_string(e.head) + "," +
                          std::to_string(e.dependent) + ") out of range for n=" + std::to_string(n));
    }
    if (e.tag >= fv.dim(0)) throw ContractError("dependency_table: tag index out of range");
    cell_tag[e.head * n + e.dependent] = e.tag;
    cell_tag[e.dependent * n + e.head] = e.tag;
  }
  Tensor out({n, n, beta});
  for (std::size_t c = 0; c < n * n; ++c) {
    const Real* src = cell_tag[c] == none ? phi.data() : fv.data() + cell_tag[c] * beta;
    std::copy_n(src, beta, out.data() + c * beta);
  }
  return tape.record(std::move(out), {tag_embeddings, null_vector},
                     [tag_embeddings, null_vector, cell_tag = std::move(cell_tag), beta](Tape& t, const Tensor& g) {
                       Tensor* gf = t.grad_buffer(tag_embeddings);
                       Tensor* gp = t.grad_buffer(null_vector);
                       for (std::size_t c = 0; c < cell_tag.size(); ++c) {
                         Tensor* dst = cell_tag[c] == none ? gp : gf;
                         if (!dst) continue;
                         const std::size_t base = cell_tag[c] == none ? 0 : cell_tag[c] * beta;
                         for (std::size_t k = 0; k < beta; ++k) (*dst)[base + k] += g[c * beta + k];
                       }
                     });
}

// P[i,j] = F[i - j] where the table rows cover offsets -max_offset..max_offset.
// Offsets past the table clamp to its extreme rows.
inline Var position_table(Var offset_embeddings, std::size_t n) {
  Tape& tape = detail::tape_of(offset_embeddings);
  const Tensor& fv = tape.value(offset_embeddings);
  detail::require_rank(fv, 2, "position_table");
  if (fv.dim(0) % 2 == 0) throw ShapeError("position_table: offset table needs an odd row count");
  const auto max_offset = static_cast<long>(fv.dim(0) / 2);
  const std::size_t gamma = fv.dim(1);
  std::vector<std::size_t> cell_row(n * n);
  bool clamped = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long off = static_cast<long>(i) - static_cast<long>(j);
      if (off > max_offset || off < -max_offset) {
        clamped = true;
        off = std::clamp(off, -max_offset, max_offset);
      }
      cell_row[i * n + j] = static_cast<std::size_t>(off + max_offset);
    }
  }
  if (clamped) {
    log::warn("position_table: sentence of length ", n, " exceeds offset range +-", max_offset,
              "; offsets clamped");
  }
  Tensor out({n, n, gamma});
  for (std::size_t c = 0; c < n * n; ++c) std::copy_n(fv.data() + cell_row[c] * gamma, gamma, out.data() + c * gamma);
  return tape.record(std::move(out), {offset_embeddings},
                     [offset_embeddings, cell_row = std::move(cell_row), gamma](Tape& t, const Tensor& g) {
                       Tensor* gf = t.grad_buffer(offset_embeddings);
                       if (!gf) return;
                       for (std::size_t c = 0; c < cell_row.size(); ++c)
                         for (std::size_t k = 0; k < gamma; ++k) (*gf)[cell_row[c] * gamma + k] += g[c * gamma + k];
                     });
}

// Same-size 2-D convolution over a table x [n x n x u] with zero padding.
// Filters are laid out [t x t x u x v] (window row, window col, in, out).
inline Var conv2d_padded(Var x, Var filters, Var bias) {
  Tape& tape = detail::tape_of(x);
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(filters);
  detail::require_rank(xv, 3, "conv2d_padded");
  const std::size_t n = xv.dim(0);
  if (xv.dim(1) != n) throw ShapeError("conv2d_padded: input table must be square, got " + shape_string(xv.shape()));
  if (n == 0) throw ContractError("conv2d_padded: empty input table");
  const std::size_t u = xv.dim(2);
  if (wv.rank() != 4 || wv.dim(0) != wv.dim(1) || wv.dim(0) % 2 == 0) {
    throw ShapeError("conv2d_padded: filters must be t x t x u x v with odd t, got " + shape_string(wv.shape()));
  }
  if (wv.dim(2) != u) {
    throw ShapeError("conv2d_padded: filter depth " + std::to_string(wv.dim(2)) + " does not match input channels " +
                     std::to_string(u));
  }
  const std::size_t win = wv.dim(0), v = wv.dim(3);
  const long half = static_cast<long>(win / 2);
  if (tape.value(bias).size() != v) throw ShapeError("conv2d_padded: bias length mismatch");
  Tensor out({n, n, v});
  const auto sn = static_cast<long>(n);
  for (long i = 0; i < sn; ++i) {
    for (long j = 0; j < sn; ++j) {
      Real* o = out.data() + (i * sn + j) * v;
      std::copy_n(tape.value(bias).data(), v, o);
      for (long di = -half; di <= half; ++di) {
        const long ii = i + di;
        if (ii < 0 || ii >= sn) continue;
        for (long dj = -half; dj <= half; ++dj) {
          const long jj = j + dj;
          if (jj < 0 || jj >= sn) continue;
          const Real* w = wv.data() + ((di + half) * static_cast<long>(win) + (dj + half)) * static_cast<long>(u * v);
          detail::gemm_nn(xv.data() + (ii * sn + jj) * u, w, o, 1, u, v);
        }
      }
    }
  }
  return tape.record(std::move(out), {x, filters, bias}, [x, filters, bias, n, u, v, win, half](Tape& t, const Tensor& g) {
    const Tensor& xv2 = t.value(x);
    const Tensor& wv2 = t.value(filters);
    Tensor* gx = t.grad_buffer(x);
    Tensor* gw = t.grad_buffer(filters);
    Tensor* gb = t.grad_buffer(bias);
    const auto sn = static_cast<long>(n);
    for (long i = 0; i < sn; ++i) {
      for (long j = 0; j < sn; ++j) {
        const Real* go = g.data() + (i * sn + j) * v;
        if (gb)
          for (std::size_t k = 0; k < v; ++k) (*gb)[k] += go[k];
        for (long di = -half; di <= half; ++di) {
          const long ii = i + di;
          if (ii < 0 || ii >= sn) continue;
          for (long dj = -half; dj <= half; ++dj) {
            const long jj = j + dj;
            if (jj < 0 || jj >= sn) continue;
            const std::size_t woff = static_cast<std::size_t>((di + half) * static_cast<long>(win) + (dj + half)) * u * v;
            const std::size_t xoff = static_cast<std::size_t>(ii * sn + jj) * u;
            if (gx) detail::gemm_nt(go, wv2.data() + woff, gx->data() + xoff, 1, v, u);
            if (gw) detail::gemm_tn(xv2.data() + xoff, go, gw->data() + woff, 1, u, v);
          }
        }
      }
    }
  });
}

struct BatchNormStats {
  Tensor mean;
  Tensor var;
};

inline constexpr Real kBatchNormEps = Real{1e-5};

// Per-channel normalization over every cell of x (channels on the last axis).
// Training mode normalizes with the statistics of x itself and reports them
// through `stats_out` so the caller can update its running averages.
inline Var batch_norm_train(Var x, Var gamma, Var beta, BatchNormStats* stats_out = nullptr) {
  Tape& tape = detail::tape_of(x);
  const Tensor& xv = tape.value(x);
  const std::size_t ch = xv.shape().back();
  const std::size_t cells = xv.size() / ch;
  if (tape.value(gamma).size() != ch || tape.value(beta).size() != ch) {
    throw ShapeError("batch_norm: parameter length does not match channel count");
  }
  if (cells == 0) throw ContractError("batch_norm: empty input");
  Tensor mean({ch}), var({ch});
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t k = 0; k < ch; ++k) mean[k] += xv[c * ch + k];
  for (Real& m : mean.values()) m /= static_cast<Real>(cells);
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t k = 0; k < ch; ++k) {
      const Real d = xv[c * ch + k] - mean[k];
      var[k] += d * d;
    }
  for (Real& s : var.values()) s /= static_cast<Real>(cells);
  Tensor inv_std({ch});
  for (std::size_t k = 0; k < ch; ++k) inv_std[k] = Real{1} / std::sqrt(var[k] + kBatchNormEps);
  Tensor xhat = Tensor::zeros_like(xv);
  Tensor out = Tensor::zeros_like(xv);
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t k = 0; k < ch; ++k) {
      const std::size_t idx = c * ch + k;
      xhat[idx] = (xv[idx] - mean[k]) * inv_std[k];
      out[idx] = gv[k] * xhat[idx] + bv[k];
    }
  if (stats_out) *stats_out = BatchNormStats{mean, var};
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, ch, cells, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                                       const Tensor& g) {
                       const Tensor& gv2 = t.value(gamma);
                       std::vector<Real> sum_dxhat(ch, 0), sum_dxhat_xhat(ch, 0);
                       Tensor* gg = t.grad_buffer(gamma);
                       Tensor* gbt = t.grad_buffer(beta);
                       for (std::size_t c = 0; c < cells; ++c)
                         for (std::size_t k = 0; k < ch; ++k) {
                           const std::size_t idx = c * ch + k;
                           if (gg) (*gg)[k] += g[idx] * xhat[idx];
                           if (gbt) (*gbt)[k] += g[idx];
                           const Real dxhat = g[idx] * gv2[k];
                           sum_dxhat[k] += dxhat;
                           sum_dxhat_xhat[k] += dxhat * xhat[idx];
                         }
                       Tensor* gx = t.grad_buffer(x);
                       if (!gx) return;
                       const Real count = static_cast<Real>(cells);
                       for (std::size_t c = 0; c < cells; ++c)
                         for (std::size_t k = 0; k < ch; ++k) {
                           const std::size_t idx = c * ch + k;
                           const Real dxhat = g[idx] * gv2[k];
                           (*gx)[idx] += inv_std[k] / count *
                                         (count * dxhat - sum_dxhat[k] - xhat[idx] * sum_dxhat_xhat[k]);
                         }
                     });
}

// Inference-mode normalization with frozen running statistics.
inline Var batch_norm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var) {
  Tape& tape = detail::tape_of(x);
  const Tensor& xv = tape.value(x);
  const std::size_t ch = xv.shape().back();
  if (running_mean.size() != ch || running_var.size() != ch || tape.value(gamma).size() != ch) {
    throw ShapeError("batch_norm: running statistics do not match channel count");
  }
  const std::size_t cells = xv.size() / ch;
  Tensor coef({ch});
  for (std::size_t k = 0; k < ch; ++k) coef[k] = Real{1} / std::sqrt(running_var[k] + kBatchNormEps);
  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t c = 0; c < cells; ++c)
    for (std::size_t k = 0; k < ch; ++k) {
      const std::size_t idx = c * ch + k;
      out[idx] = gv[k] * (xv[idx] - running_mean[k]) * coef[k] + bv[k];
    }
  return tape.record(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, ch, cells, coef = std::move(coef), running_mean](Tape& t, const Tensor& g) {
                       const Tensor& xv2 = t.value(x);
                       const Tensor& gv2 = t.value(gamma);
                       Tensor* gx = t.grad_buffer(x);
                       Tensor* gg = t.grad_buffer(gamma);
                       Tensor* gbt = t.grad_buffer(beta);
                       for (std::size_t c = 0; c < cells; ++c)
                         for (std::size_t k = 0; k < ch; ++k) {
                           const std::size_t idx = c * ch + k;
                           if (gx) (*gx)[idx] += g[idx] * gv2[k] * coef[k];
                           if (gg) (*gg)[k] += g[idx] * (xv2[idx] - running_mean[k]) * coef[k];
                           if (gbt) (*gbt)[k] += g[idx];
                         }
                     });
}

// Softmax along the last axis.
inline Var softmax_last(Var x) {
  Tape& tape = detail::tape_of(x);
  const Tensor& xv = tape.value(x);
  const std::size_t ch = xv.shape().back();
  const std::size_t cells = xv.size() / ch;
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t c = 0; c < cells; ++c) {
    const Real* in = xv.data() + c * ch;
    Real* o = out.data() + c * ch;
    const Real mx = *std::max_element(in, in + ch);
    Real total = 0;
    for (std::size_t k = 0; k < ch; ++k) total += (o[k] = std::exp(in[k] - mx));
    for (std::size_t k = 0; k < ch; ++k) o[k] /= total;
  }
  Tensor probs = out;
  return tape.record(std::move(out), {x}, [x, ch, cells, probs = std::move(probs)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    if (!gx) return;
    for (std::size_t c = 0; c < cells; ++c) {
      const Real* p = probs.data() + c * ch;
      const Real* gc = g.data() + c * ch;
      Real dot = 0;
      for (std::size_t k = 0; k < ch; ++k) dot += gc[k] * p[k];
      for (std::size_t k = 0; k < ch; ++k) (*gx)[c * ch + k] += p[k] * (gc[k] - dot);
    }
  });
}

inline constexpr Real kLogClamp = Real{1e-12};

// Table cross-entropy: -(1/n) sum_{i,j,k} Y[i,j,k] log max(Q[i,j,k], 1e-12)
// for Q, Y of shape n x n x |Z|.
inline Var table_cross_entropy(Var probs, const Tensor& target) {
  Tape& tape = detail::tape_of(probs);
  const Tensor& qv = tape.value(probs);
  detail::require_rank(qv, 3, "table_cross_entropy");
  qv.require_same_shape(target, "table_cross_entropy");
  const std::size_t n = qv.dim(0);
  if (n == 0) throw ContractError("table_cross_entropy: empty table");
  const Real inv_n = Real{1} / static_cast<Real>(n);
  Real loss = 0;
  for (std::size_t i = 0; i < qv.size(); ++i)
    if (target[i] != Real{0}) loss -= target[i] * std::log(std::max(qv[i], kLogClamp));
  loss *= inv_n;
  return tape.record(Tensor::scalar(loss), {probs}, [probs, target, inv_n](Tape& t, const Tensor& g) {
    Tensor* gq = t.grad_buffer(probs);
    if (!gq) return;
    const Tensor& q = t.value(probs);
    for (std::size_t i = 0; i < q.size(); ++i)
      if (target[i] != Real{0} && q[i] > kLogClamp) (*gq)[i] -= g[0] * inv_n * target[i] / q[i];
  });
}

}  // namespace relmetric::ops
