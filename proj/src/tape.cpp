#include "causerec/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "causerec/errors.hpp"

namespace causerec {

const Dense2& Var::value() const { return tape->value(*this); }

Var Tape::param(const Dense2& value, Dense2* grad) {
  if (grad == nullptr || !grad->same_shape(value)) {
    throw DimensionError("Tape::param: gradient buffer shape does not match " +
                         value.shape_str());
  }
  Node n;
  n.op = "param";
  n.external = &value;
  n.external_grad = grad;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Dense2 value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::view(const Dense2& value) {
  Node n;
  n.op = "view";
  n.external = &value;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::input(Dense2 value) {
  Node n;
  n.op = "input";
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(const char* op, Dense2 value, std::span<const Var> inputs,
                 BackwardFn backward) {
  Node n;
  n.op = op;
  n.owned = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape != this) throw Error(std::string(op) + ": input from a different tape");
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Dense2& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external != nullptr ? *n.external : n.owned;
}

Dense2& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.external_grad != nullptr) return *n.external_grad;
  if (!n.grad_touched) {
    const Dense2& v = n.external != nullptr ? *n.external : n.owned;
    n.grad = Dense2(v.rows(), v.cols());
    n.grad_touched = true;
  }
  return n.grad;
}

Dense2 Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.external_grad != nullptr) return *n.external_grad;
  if (n.grad_touched) return n.grad;
  const Dense2& val = value(v);
  return Dense2(val.rows(), val.cols());
}

void Tape::backward(Var out) {
  const Dense2& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError("Tape::backward: scalar output expected, got " + v.shape_str());
  }
  backward(out, Dense2(1, 1, 1.0));
}

void Tape::backward(Var out, const Dense2& seed) {
  require_same_shape(value(out), seed, "Tape::backward seed");
  visit_order_.clear();
  if (!nodes_[out.id].requires_grad) return;
  Dense2& g = grad_buffer(out.id);
  for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] += seed.values()[i];
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    visit_order_.push_back(i);
    if (!n.backward || (!n.grad_touched && n.external_grad == nullptr)) continue;
    n.backward(*this, i);
  }
}

namespace {

void require(bool ok, const char* op, const Dense2& a, const Dense2& b) {
  if (!ok) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_str() +
                         " and " + b.shape_str());
  }
}

// dst += src over a span.
void axpy(double alpha, std::span<const double> src, std::span<double> dst) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += alpha * src[i];
}

// y(i, o) = x_i . w_o (+ b_o).
Dense2 matmul_nt(const Dense2& x, const Dense2& w, const Dense2* b) {
  Dense2 y(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    auto yi = y.row(i);
    for (std::size_t o = 0; o < w.rows(); ++o) yi[o] = dot(xi, w.row(o));
    if (b != nullptr) axpy(1.0, b->row(0), yi);
  }
  return y;
}

// gx += gy w and gw += gy^T x.
void matmul_nt_backward(Tape& t, const Dense2& gy, Var x, Var w) {
  const Dense2& xv = x.value();
  const Dense2& wv = w.value();
  const std::size_t in = xv.cols();
  if (t.requires_grad(x)) {
    Dense2& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < gy.rows(); ++i) {
      double* gxi = gx.row(i).data();
      for (std::size_t o = 0; o < gy.cols(); ++o) {
        const double g = gy(i, o);
        if (g == 0.0) continue;
        const double* wo = wv.row(o).data();
        for (std::size_t c = 0; c < in; ++c) gxi[c] += g * wo[c];
      }
    }
  }
  if (t.requires_grad(w)) {
    Dense2& gw = t.grad_buffer(w.id);
    for (std::size_t i = 0; i < gy.rows(); ++i) {
      const double* xi = xv.row(i).data();
      for (std::size_t o = 0; o < gy.cols(); ++o) {
        const double g = gy(i, o);
        if (g == 0.0) continue;
        double* gwo = gw.row(o).data();
        for (std::size_t c = 0; c < in; ++c) gwo[c] += g * xi[c];
      }
    }
  }
}

void check_offsets(const char* op, std::span<const std::size_t> offsets, std::size_t rows) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows) {
    throw DimensionError(std::string(op) + ": segment offsets do not cover " +
                         std::to_string(rows) + " rows");
  }
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s + 1] <= offsets[s]) {
      throw DimensionError(std::string(op) + ": empty or unordered segment " +
                           std::to_string(s));
    }
  }
}

}  // namespace

Var linear(Var x, Var w) {
  const Dense2& xv = x.value();
  const Dense2& wv = w.value();
  require(xv.cols() == wv.cols(), "linear", xv, wv);
  const Var ins[] = {x, w};
  return x.tape->record("linear", matmul_nt(xv, wv, nullptr), ins, [x, w](Tape& t, std::size_t self) {
    matmul_nt_backward(t, t.grad_buffer(self), x, w);
  });
}

Var affine(Var x, Var w, Var b) {
  const Dense2& xv = x.value();
  const Dense2& wv = w.value();
  const Dense2& bv = b.value();
  if (xv.cols() != wv.cols() || bv.rows() != 1 || bv.cols() != wv.rows()) {
    throw DimensionError("affine: x " + xv.shape_str() + ", W " + wv.shape_str() + ", b " +
                         bv.shape_str());
  }
  const Var ins[] = {x, w, b};
  return x.tape->record("affine", matmul_nt(xv, wv, &bv), ins, [x, w, b](Tape& t, std::size_t self) {
    const Dense2& gy = t.grad_buffer(self);
    matmul_nt_backward(t, gy, x, w);
    if (t.requires_grad(b)) {
      Dense2& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < gy.rows(); ++i) axpy(1.0, gy.row(i), gb.row(0));
    }
  });
}

Var relu(Var x) {
  Dense2 y = x.value();
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  const Var ins[] = {x};
  return x.tape->record("relu", std::move(y), ins, [x](Tape& t, std::size_t self) {
    const Dense2& gy = t.grad_buffer(self);
    const auto xv = x.value().values();
    auto gx = t.grad_buffer(x.id).values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += gy.values()[i];
    }
  });
}

Var tanh_map(Var x) {
  Dense2 y = x.value();
  for (double& v : y.values()) v = std::tanh(v);
  const Var ins[] = {x};
  return x.tape->record("tanh", std::move(y), ins, [x](Tape& t, std::size_t self) {
    const auto gy = t.grad_buffer(self).values();
    const auto yv = t.value({&t, self}).values();
    auto gx = t.grad_buffer(x.id).values();
    for (std::size_t i = 0; i < yv.size(); ++i) gx[i] += gy[i] * (1.0 - yv[i] * yv[i]);
  });
}

Var softmax_rows(Var x) {
  const Dense2& xv = x.value();
  Dense2 y(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    auto out = y.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - mx);
      s += out[c];
    }
    for (double& v : out) v /= s;
  }
  const Var ins[] = {x};
  return x.tape->record("softmax_rows", std::move(y), ins, [x](Tape& t, std::size_t self) {
    const Dense2& gy = t.grad_buffer(self);
    const Dense2& yv = t.value({&t, self});
    Dense2& gx = t.grad_buffer(x.id);
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      const double inner = dot(gy.row(r), yv.row(r));
      for (std::size_t c = 0; c < yv.cols(); ++c) gx(r, c) += yv(r, c) * (gy(r, c) - inner);
    }
  });
}

Var l2_normalize_rows(Var x) {
  const Dense2& xv = x.value();
  Dense2 y(xv.rows(), xv.cols());
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    norms[r] = l2_norm(xv.row(r));
    if (!std::isfinite(norms[r])) {
      throw DivergenceError("l2_normalize: row " + std::to_string(r) + " is not finite");
    }
    if (norms[r] < 1e-12) {
      throw DegenerateVectorError("l2_normalize: row " + std::to_string(r) + " has norm " +
                                  std::to_string(norms[r]));
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) y(r, c) = xv(r, c) / norms[r];
  }
  const Var ins[] = {x};
  return x.tape->record(
      "l2_normalize_rows", std::move(y), ins,
      [x, norms = std::move(norms)](Tape& t, std::size_t self) {
        const Dense2& gy = t.grad_buffer(self);
        const Dense2& yv = t.value({&t, self});
        Dense2& gx = t.grad_buffer(x.id);
        // d(x/|x|) = (g - y <g, y>) / |x|
        for (std::size_t r = 0; r < yv.rows(); ++r) {
          const double inner = dot(gy.row(r), yv.row(r));
          for (std::size_t c = 0; c < yv.cols(); ++c) {
            gx(r, c) += (gy(r, c) - yv(r, c) * inner) / norms[r];
          }
        }
      });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Dense2 y = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < bv.size(); ++i) y.values()[i] += bv[i];
  const Var ins[] = {a, b};
  return a.tape->record("add", std::move(y), ins, [a, b](Tape& t, std::size_t self) {
    const auto gy = t.grad_buffer(self).values();
    if (t.requires_grad(a)) axpy(1.0, gy, t.grad_buffer(a.id).values());
    if (t.requires_grad(b)) axpy(1.0, gy, t.grad_buffer(b.id).values());
  });
}

Var affine_scalar(Var x, double a, double b) {
  Dense2 y = x.value();
  for (double& v : y.values()) v = a * v + b;
  const Var ins[] = {x};
  return x.tape->record("affine_scalar", std::move(y), ins, [x, a](Tape& t, std::size_t self) {
    axpy(a, t.grad_buffer(self).values(), t.grad_buffer(x.id).values());
  });
}

Var scale(Var x, double c) { return affine_scalar(x, c, 0.0); }

Var hinge(Var x, double margin) {
  Dense2 y = x.value();
  for (double& v : y.values()) v = v - margin > 0.0 ? v - margin : 0.0;
  const Var ins[] = {x};
  return x.tape->record("hinge", std::move(y), ins, [x, margin](Tape& t, std::size_t self) {
    const auto gy = t.grad_buffer(self).values();
    const auto xv = x.value().values();
    auto gx = t.grad_buffer(x.id).values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] - margin > 0.0) gx[i] += gy[i];
    }
  });
}

Var row_sum(Var x) {
  const Dense2& xv = x.value();
  Dense2 y(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v;
    y(r, 0) = s;
  }
  const Var ins[] = {x};
  return x.tape->record("row_sum", std::move(y), ins, [x](Tape& t, std::size_t self) {
    const Dense2& gy = t.grad_buffer(self);
    Dense2& gx = t.grad_buffer(x.id);
    for (std::size_t r = 0; r < gx.rows(); ++r) {
      for (double& g : gx.row(r)) g += gy(r, 0);
    }
  });
}

Var sum_all(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const Var ins[] = {x};
  return x.tape->record("sum_all", Dense2(1, 1, s), ins, [x](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)(0, 0);
    for (double& gx : t.grad_buffer(x.id).values()) gx += g;
  });
}

Var mean_all(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean_all: empty input");
  return scale(sum_all(x), 1.0 / static_cast<double>(n));
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Dense2& tv = table.value();
  Dense2 y(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw VocabularyError("gather_rows: index " + std::to_string(ids[i]) +
                            " out of range for " + tv.shape_str());
    }
    std::copy_n(tv.row(ids[i]).begin(), tv.cols(), y.row(i).begin());
  }
  const Var ins[] = {table};
  return table.tape->record(
      "gather_rows", std::move(y), ins,
      [table, idx = std::vector<std::size_t>(ids.begin(), ids.end())](Tape& t,
                                                                       std::size_t self) {
        const Dense2& gy = t.grad_buffer(self);
        Dense2& gt = t.grad_buffer(table.id);
        for (std::size_t i = 0; i < idx.size(); ++i) axpy(1.0, gy.row(i), gt.row(idx[i]));
      });
}

Var concat_rows(Var a, Var b) {
  const Dense2& av = a.value();
  const Dense2& bv = b.value();
  require(av.cols() == bv.cols(), "concat_rows", av, bv);
  std::vector<double> data(av.values().begin(), av.values().end());
  data.insert(data.end(), bv.values().begin(), bv.values().end());
  const Var ins[] = {a, b};
  return a.tape->record("concat_rows", Dense2(av.rows() + bv.rows(), av.cols(), std::move(data)),
                        ins, [a, b](Tape& t, std::size_t self) {
                          const auto gy = t.grad_buffer(self).values();
                          const std::size_t na = a.value().size();
                          if (t.requires_grad(a)) axpy(1.0, gy.first(na), t.grad_buffer(a.id).values());
                          if (t.requires_grad(b)) axpy(1.0, gy.subspan(na), t.grad_buffer(b.id).values());
                        });
}

Var replace_rows(Var x, std::span<const std::size_t> rows, const Dense2& replacement) {
  const Dense2& xv = x.value();
  if (replacement.rows() != rows.size() || (replacement.rows() > 0 && replacement.cols() != xv.cols())) {
    throw DimensionError("replace_rows: " + std::to_string(rows.size()) +
                         " rows to replace, replacement " + replacement.shape_str() +
                         ", input " + xv.shape_str());
  }
  Dense2 y = xv;
  std::vector<char> replaced(xv.rows(), 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw DimensionError("replace_rows: row index out of range");
    std::copy_n(replacement.row(i).begin(), xv.cols(), y.row(rows[i]).begin());
    replaced[rows[i]] = 1;
  }
  const Var ins[] = {x};
  return x.tape->record("replace_rows", std::move(y), ins,
                        [x, replaced = std::move(replaced)](Tape& t, std::size_t self) {
                          const Dense2& gy = t.grad_buffer(self);
                          Dense2& gx = t.grad_buffer(x.id);
                          for (std::size_t r = 0; r < gy.rows(); ++r) {
                            if (!replaced[r]) axpy(1.0, gy.row(r), gx.row(r));
                          }
                        });
}

Var segment_mean(Var x, std::span<const std::size_t> offsets) {
  const Dense2& xv = x.value();
  check_offsets("segment_mean", offsets, xv.rows());
  const std::size_t nseg = offsets.size() - 1;
  Dense2 y(nseg, xv.cols());
  std::vector<std::size_t> order;
  for (std::size_t s = 0; s < nseg; ++s) {
    const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
    // Rows summed in lexicographic order, independent of their input order.
    order.resize(offsets[s + 1] - offsets[s]);
    std::iota(order.begin(), order.end(), offsets[s]);
    std::sort(order.begin(), order.end(), [&xv](std::size_t a, std::size_t b) {
      auto ra = xv.row(a), rb = xv.row(b);
      return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    auto ys = y.row(s);
    for (std::size_t r : order) axpy(1.0, xv.row(r), ys);
    for (double& v : ys) v *= inv;
  }
  const Var ins[] = {x};
  return x.tape->record(
      "segment_mean", std::move(y), ins,
      [x, off = std::vector<std::size_t>(offsets.begin(), offsets.end())](Tape& t,
                                                                          std::size_t self) {
        const Dense2& gy = t.grad_buffer(self);
        Dense2& gx = t.grad_buffer(x.id);
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
          const double inv = 1.0 / static_cast<double>(off[s + 1] - off[s]);
          for (std::size_t r = off[s]; r < off[s + 1]; ++r) axpy(inv, gy.row(s), gx.row(r));
        }
      });
}

Var segment_softmax_cols(Var s, std::span<const std::size_t> offsets) {
  const Dense2& sv = s.value();
  check_offsets("segment_softmax_cols", offsets, sv.rows());
  const std::size_t k = sv.cols();
  Dense2 y(sv.rows(), k);
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    for (std::size_t c = 0; c < k; ++c) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) mx = std::max(mx, sv(r, c));
      double z = 0.0;
      for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) {
        y(r, c) = std::exp(sv(r, c) - mx);
        z += y(r, c);
      }
      for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) y(r, c) /= z;
    }
  }
  const Var ins[] = {s};
  return s.tape->record(
      "segment_softmax_cols", std::move(y), ins,
      [s, off = std::vector<std::size_t>(offsets.begin(), offsets.end())](Tape& t,
                                                                          std::size_t self) {
        const Dense2& gy = t.grad_buffer(self);
        const Dense2& yv = t.value({&t, self});
        Dense2& gs = t.grad_buffer(s.id);
        for (std::size_t g = 0; g + 1 < off.size(); ++g) {
          for (std::size_t c = 0; c < yv.cols(); ++c) {
            double inner = 0.0;
            for (std::size_t r = off[g]; r < off[g + 1]; ++r) inner += gy(r, c) * yv(r, c);
            for (std::size_t r = off[g]; r < off[g + 1]; ++r) {
              gs(r, c) += yv(r, c) * (gy(r, c) - inner);
            }
          }
        }
      });
}

Var segment_attend(Var a, Var x, std::span<const std::size_t> offsets) {
  const Dense2& av = a.value();
  const Dense2& xv = x.value();
  require(av.rows() == xv.rows(), "segment_attend", av, xv);
  check_offsets("segment_attend", offsets, xv.rows());
  const std::size_t nseg = offsets.size() - 1;
  const std::size_t k = av.cols();
  Dense2 y(nseg * k, xv.cols());
  for (std::size_t g = 0; g < nseg; ++g) {
    for (std::size_t r = offsets[g]; r < offsets[g + 1]; ++r) {
      for (std::size_t c = 0; c < k; ++c) axpy(av(r, c), xv.row(r), y.row(g * k + c));
    }
  }
  const Var ins[] = {a, x};
  return a.tape->record(
      "segment_attend", std::move(y), ins,
      [a, x, off = std::vector<std::size_t>(offsets.begin(), offsets.end())](Tape& t,
                                                                             std::size_t self) {
        const Dense2& gy = t.grad_buffer(self);
        const Dense2& av = a.value();
        const Dense2& xv = x.value();
        const std::size_t k = av.cols();
        const bool need_a = t.requires_grad(a);
        const bool need_x = t.requires_grad(x);
        for (std::size_t g = 0; g + 1 < off.size(); ++g) {
          for (std::size_t r = off[g]; r < off[g + 1]; ++r) {
            for (std::size_t c = 0; c < k; ++c) {
              if (need_a) t.grad_buffer(a.id)(r, c) += dot(gy.row(g * k + c), xv.row(r));
              if (need_x) axpy(av(r, c), gy.row(g * k + c), t.grad_buffer(x.id).row(r));
            }
          }
        }
      });
}

Var grouped_dot(Var u, Var e, std::size_t group) {
  const Dense2& uv = u.value();
  const Dense2& ev = e.value();
  require(group > 0 && uv.cols() == ev.cols() && ev.rows() == uv.rows() * group, "grouped_dot",
          uv, ev);
  Dense2 y(uv.rows(), group);
  for (std::size_t b = 0; b < uv.rows(); ++b) {
    for (std::size_t j = 0; j < group; ++j) y(b, j) = dot(uv.row(b), ev.row(b * group + j));
  }
  const Var ins[] = {u, e};
  return u.tape->record("grouped_dot", std::move(y), ins, [u, e, group](Tape& t, std::size_t self) {
    const Dense2& gy = t.grad_buffer(self);
    const Dense2& uv = u.value();
    const Dense2& ev = e.value();
    const bool need_u = t.requires_grad(u);
    const bool need_e = t.requires_grad(e);
    for (std::size_t b = 0; b < uv.rows(); ++b) {
      for (std::size_t j = 0; j < group; ++j) {
        const double g = gy(b, j);
        if (g == 0.0) continue;
        if (need_u) axpy(g, ev.row(b * group + j), t.grad_buffer(u.id).row(b));
        if (need_e) axpy(g, uv.row(b), t.grad_buffer(e.id).row(b * group + j));
      }
    }
  });
}

Var grouped_distance(Var u, Var e, std::size_t group) {
  const Dense2& uv = u.value();
  const Dense2& ev = e.value();
  require(group > 0 && uv.cols() == ev.cols() && ev.rows() == uv.rows() * group,
          "grouped_distance", uv, ev);
  Dense2 y(uv.rows(), group);
  for (std::size_t b = 0; b < uv.rows(); ++b) {
    for (std::size_t j = 0; j < group; ++j) {
      double s = 0.0;
      auto ur = uv.row(b);
      auto er = ev.row(b * group + j);
      for (std::size_t c = 0; c < ur.size(); ++c) s += (ur[c] - er[c]) * (ur[c] - er[c]);
      y(b, j) = std::sqrt(s);
    }
  }
  const Var ins[] = {u, e};
  return u.tape->record(
      "grouped_distance", std::move(y), ins, [u, e, group](Tape& t, std::size_t self) {
        const Dense2& gy = t.grad_buffer(self);
        const Dense2& dist = t.value({&t, self});
        const Dense2& uv = u.value();
        const Dense2& ev = e.value();
        const bool need_u = t.requires_grad(u);
        const bool need_e = t.requires_grad(e);
        for (std::size_t b = 0; b < uv.rows(); ++b) {
          for (std::size_t j = 0; j < group; ++j) {
            const double d = dist(b, j);
            if (gy(b, j) == 0.0 || d == 0.0) continue;
            const double coef = gy(b, j) / d;
            auto ur = uv.row(b);
            auto er = ev.row(b * group + j);
            for (std::size_t c = 0; c < ur.size(); ++c) {
              const double g = coef * (ur[c] - er[c]);
              if (need_u) t.grad_buffer(u.id)(b, c) += g;
              if (need_e) t.grad_buffer(e.id)(b * group + j, c) -= g;
            }
          }
        }
      });
}

Var xent_first_col(Var logits) {
  const Dense2& lv = logits.value();
  if (lv.cols() == 0) throw DimensionError("xent_first_col: no columns");
  Dense2 y(lv.rows(), 1);
  Dense2 probs(lv.rows(), lv.cols());
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      probs(r, c) = std::exp(row[c] - mx);
      z += probs(r, c);
    }
    for (double& p : probs.row(r)) p /= z;
    y(r, 0) = -(row[0] - mx - std::log(z));
  }
  const Var ins[] = {logits};
  return logits.tape->record("xent_first_col", std::move(y), ins,
                             [logits, probs = std::move(probs)](Tape& t, std::size_t self) {
                               const Dense2& gy = t.grad_buffer(self);
                               Dense2& gl = t.grad_buffer(logits.id);
                               for (std::size_t r = 0; r < probs.rows(); ++r) {
                                 for (std::size_t c = 0; c < probs.cols(); ++c) {
                                   const double target = c == 0 ? 1.0 : 0.0;
                                   gl(r, c) += gy(r, 0) * (probs(r, c) - target);
                                 }
                               }
                             });
}

Var triplet_hinge(Var dpos, Var dneg, double margin) {
  const Dense2& pv = dpos.value();
  const Dense2& nv = dneg.value();
  require(pv.rows() == nv.rows() && pv.cols() > 0 && nv.cols() > 0, "triplet_hinge", pv, nv);
  Dense2 y(pv.rows(), 1);
  for (std::size_t b = 0; b < pv.rows(); ++b) {
    double s = 0.0;
    for (double p : pv.row(b)) {
      for (double n : nv.row(b)) s += std::max(p - n + margin, 0.0);
    }
    y(b, 0) = s;
  }
  const Var ins[] = {dpos, dneg};
  return dpos.tape->record(
      "triplet_hinge", std::move(y), ins, [dpos, dneg, margin](Tape& t, std::size_t self) {
        const Dense2& gy = t.grad_buffer(self);
        const Dense2& pv = dpos.value();
        const Dense2& nv = dneg.value();
        const bool need_p = t.requires_grad(dpos);
        const bool need_n = t.requires_grad(dneg);
        for (std::size_t b = 0; b < pv.rows(); ++b) {
          for (std::size_t m = 0; m < pv.cols(); ++m) {
            for (std::size_t n = 0; n < nv.cols(); ++n) {
              if (pv(b, m) - nv(b, n) + margin <= 0.0) continue;
              if (need_p) t.grad_buffer(dpos.id)(b, m) += gy(b, 0);
              if (need_n) t.grad_buffer(dneg.id)(b, n) -= gy(b, 0);
            }
          }
        }
      });
}

}  // namespace causerec
