#include "organ/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "organ/errors.hpp"
#include "organ/kernels.hpp"

namespace organ::nn {

namespace {

double sigmoid_of(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::size_t rows_of(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape()[0]; }
std::size_t cols_of(const Tensor& t) { return t.rank() < 2 ? 1 : t.size() / t.shape()[0]; }

void require_rows(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(want) + " rows, got " +
                         std::to_string(got));
  }
}

}  // namespace

void softmax(std::span<const double> logits, std::span<double> out) {
  if (out.size() != logits.size()) throw DimensionError("softmax: output size mismatch");
  if (logits.empty()) return;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax(logits, out);
  return out;
}

Tape::Tape() { nodes_.reserve(256); }

Var Tape::push(Tensor value, bool constant) {
  Node n;
  n.value = std::move(value);
  n.constant = constant;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

Tensor& Tape::grad_of(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? n.grad : Tensor(n.value.shape());
}

Var Tape::constant(Tensor value) { return push(std::move(value), true); }

Var Tape::param(Parameter& p) {
  Var out = push(p.value);
  nodes_[out.id].back = [this, out, &p] {
    const Tensor& g = nodes_[out.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
  };
  return out;
}

Var Tape::embedding(Parameter& table, std::span<const int> ids) {
  if (table.value.rank() != 2) throw DimensionError("embedding table must be rank 2");
  const std::size_t rows = table.value.dim(0);
  const std::size_t width = table.value.dim(1);
  Tensor out({ids.size(), width});
  std::vector<int> kept(ids.begin(), ids.end());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= rows) {
      throw DimensionError("embedding id " + std::to_string(ids[r]) + " out of range");
    }
    std::copy_n(table.value.row(static_cast<std::size_t>(ids[r])), width, out.row(r));
  }
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, &table, kept = std::move(kept), width] {
    const Tensor& g = nodes_[v.id].grad;
    for (std::size_t r = 0; r < kept.size(); ++r) {
      double* dst = table.grad.row(static_cast<std::size_t>(kept[r]));
      const double* src = g.row(r);
      for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
    }
  };
  return v;
}

Var Tape::affine(Var x, Parameter& w, Parameter* bias) {
  const Tensor& xv = value(x);
  if (w.value.rank() != 2) throw DimensionError("affine weight must be rank 2");
  const std::size_t out_dim = w.value.dim(0);
  const std::size_t in_dim = w.value.dim(1);
  const std::size_t rows = rows_of(xv);
  if (cols_of(xv) != in_dim) {
    throw DimensionError("affine: input width " + std::to_string(cols_of(xv)) + " vs weight " +
                         shape_string(w.value.shape()));
  }
  if (bias && bias->value.size() != out_dim) throw DimensionError("affine: bias size mismatch");
  Tensor out({rows, out_dim});
  if (bias) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias->value.ptr(), out_dim, out.row(r));
  }
  const auto& k = kernels::active();
  k.gemm_nt(rows, out_dim, in_dim, xv.ptr(), in_dim, w.value.ptr(), in_dim, out.ptr(), out_dim);
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x, &w, bias, rows, in_dim, out_dim] {
    const auto& k = kernels::active();
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& xv = nodes_[x.id].value;
    if (!nodes_[x.id].constant) {
      Tensor& gx = grad_of(x);
      k.gemm_nn(rows, in_dim, out_dim, g.ptr(), out_dim, w.value.ptr(), in_dim, gx.ptr(), in_dim);
    }
    k.gemm_tn(out_dim, in_dim, rows, g.ptr(), out_dim, xv.ptr(), in_dim, w.grad.ptr(), in_dim);
    if (bias) {
      for (std::size_t r = 0; r < rows; ++r) k.axpy(1.0, g.row(r), bias->grad.ptr(), out_dim);
    }
  };
  return v;
}

LstmState Tape::lstm_step(Var x, LstmState state, const LstmWeights& w) {
  const Tensor& xv = value(x);
  const Tensor& hv = value(state.hidden);
  const Tensor& cv = value(state.cell);
  const std::size_t rows = rows_of(xv);
  const std::size_t in_dim = cols_of(xv);
  const std::size_t hid = cols_of(hv);
  if (w.input.value.shape() != Shape{4 * hid, in_dim} || w.recurrent.value.shape() != Shape{4 * hid, hid} ||
      w.bias.value.size() != 4 * hid) {
    throw DimensionError("lstm_step: parameter shapes do not match input " + std::to_string(in_dim) +
                         " / hidden " + std::to_string(hid));
  }
  require_rows(rows_of(hv), rows, "lstm_step hidden");
  require_rows(rows_of(cv), rows, "lstm_step cell");
  if (cols_of(cv) != hid) throw DimensionError("lstm_step: cell width mismatch");

  const std::size_t g4 = 4 * hid;
  Tensor gates({rows, g4});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(w.bias.value.ptr(), g4, gates.row(r));
  const auto& k = kernels::active();
  k.gemm_nt(rows, g4, in_dim, xv.ptr(), in_dim, w.input.value.ptr(), in_dim, gates.ptr(), g4);
  k.gemm_nt(rows, g4, hid, hv.ptr(), hid, w.recurrent.value.ptr(), hid, gates.ptr(), g4);

  Tensor cell({rows, hid});
  Tensor hidden({rows, hid});
  Tensor cell_tanh({rows, hid});
  for (std::size_t r = 0; r < rows; ++r) {
    double* gr = gates.row(r);
    for (std::size_t j = 0; j < 3 * hid; ++j) gr[j] = sigmoid_of(gr[j]);
    for (std::size_t j = 3 * hid; j < g4; ++j) gr[j] = std::tanh(gr[j]);
    const double* cp = cv.row(r);
    for (std::size_t j = 0; j < hid; ++j) {
      const double c = gr[hid + j] * cp[j] + gr[j] * gr[3 * hid + j];
      const double tc = std::tanh(c);
      cell.at(r, j) = c;
      cell_tanh.at(r, j) = tc;
      hidden.at(r, j) = gr[2 * hid + j] * tc;
    }
  }

  // Three nodes: activated gates (its grad slot holds pre-activation grads),
  // the new cell, the new hidden state. Reverse order of creation gives
  // hidden -> cell -> gates during backward.
  Var gv = push(std::move(gates));
  Var cvar = push(std::move(cell));
  Var hvar = push(std::move(hidden));
  const Var h_prev = state.hidden;
  const Var c_prev = state.cell;

  nodes_[hvar.id].back = [this, hvar, cvar, gv, hid, rows, cell_tanh = std::move(cell_tanh)] {
    const Tensor& dh = nodes_[hvar.id].grad;
    const Tensor& gates = nodes_[gv.id].value;
    Tensor& dgates = grad_of(gv);
    Tensor& dc = grad_of(cvar);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < hid; ++j) {
        const double o = gates.at(r, 2 * hid + j);
        const double tc = cell_tanh.at(r, j);
        const double g = dh.at(r, j);
        dgates.at(r, 2 * hid + j) += g * tc * o * (1.0 - o);
        dc.at(r, j) += g * o * (1.0 - tc * tc);
      }
    }
  };
  nodes_[cvar.id].back = [this, cvar, gv, c_prev, hid, rows] {
    const Tensor& dc = nodes_[cvar.id].grad;
    const Tensor& gates = nodes_[gv.id].value;
    const Tensor& cp = nodes_[c_prev.id].value;
    Tensor& dgates = grad_of(gv);
    const bool prev_needs = !nodes_[c_prev.id].constant;
    Tensor* dcp = prev_needs ? &grad_of(c_prev) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < hid; ++j) {
        const double i = gates.at(r, j);
        const double f = gates.at(r, hid + j);
        const double cand = gates.at(r, 3 * hid + j);
        const double g = dc.at(r, j);
        dgates.at(r, j) += g * cand * i * (1.0 - i);
        dgates.at(r, hid + j) += g * cp.at(r, j) * f * (1.0 - f);
        dgates.at(r, 3 * hid + j) += g * i * (1.0 - cand * cand);
        if (dcp) dcp->at(r, j) += g * f;
      }
    }
  };
  nodes_[gv.id].back = [this, gv, x, h_prev, w, rows, in_dim, hid] {
    const auto& k = kernels::active();
    const std::size_t g4 = 4 * hid;
    const Tensor& dp = nodes_[gv.id].grad;
    const Tensor& xv = nodes_[x.id].value;
    const Tensor& hv = nodes_[h_prev.id].value;
    if (!nodes_[x.id].constant) {
      k.gemm_nn(rows, in_dim, g4, dp.ptr(), g4, w.input.value.ptr(), in_dim, grad_of(x).ptr(), in_dim);
    }
    if (!nodes_[h_prev.id].constant) {
      k.gemm_nn(rows, hid, g4, dp.ptr(), g4, w.recurrent.value.ptr(), hid, grad_of(h_prev).ptr(), hid);
    }
    k.gemm_tn(g4, in_dim, rows, dp.ptr(), g4, xv.ptr(), in_dim, w.input.grad.ptr(), in_dim);
    k.gemm_tn(g4, hid, rows, dp.ptr(), g4, hv.ptr(), hid, w.recurrent.grad.ptr(), hid);
    for (std::size_t r = 0; r < rows; ++r) k.axpy(1.0, dp.row(r), w.bias.grad.ptr(), g4);
  };
  return {hvar, cvar};
}

Var Tape::conv_maxpool(Var x, std::size_t seq_len, Parameter& filters, Parameter& bias, std::size_t width,
                       Activation act) {
  const Tensor& xv = value(x);
  const std::size_t rows = rows_of(xv);
  const std::size_t row_len = cols_of(xv);
  if (seq_len == 0 || row_len % seq_len != 0) throw DimensionError("conv_maxpool: row is not seq_len embeddings");
  const std::size_t emb = row_len / seq_len;
  if (width == 0 || width > seq_len) {
    throw DimensionError("conv_maxpool: sequence length " + std::to_string(seq_len) + " shorter than filter width " +
                         std::to_string(width));
  }
  if (filters.value.rank() != 2 || filters.value.dim(1) != width * emb) {
    throw DimensionError("conv_maxpool: filter bank " + shape_string(filters.value.shape()) + " does not match width " +
                         std::to_string(width) + " x embedding " + std::to_string(emb));
  }
  const std::size_t nf = filters.value.dim(0);
  if (bias.value.size() != nf) throw DimensionError("conv_maxpool: bias size mismatch");
  const std::size_t positions = seq_len - width + 1;
  const std::size_t span = width * emb;

  Tensor pre({rows, nf});
  Tensor out({rows, nf});
  std::vector<std::size_t> argmax(rows * nf);
  std::vector<double> scratch(positions * nf);
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(scratch.begin(), scratch.end(), 0.0);
    // Overlapping windows: consecutive positions start emb doubles apart.
    k.gemm_nt(positions, nf, span, xv.row(r), emb, filters.value.ptr(), span, scratch.data(), nf);
    for (std::size_t f = 0; f < nf; ++f) {
      std::size_t best = 0;
      double top = scratch[f];
      for (std::size_t t = 1; t < positions; ++t) {
        if (scratch[t * nf + f] > top) {
          top = scratch[t * nf + f];
          best = t;
        }
      }
      const double z = top + bias.value[f];
      argmax[r * nf + f] = best;
      pre.at(r, f) = z;
      switch (act) {
        case Activation::Identity: out.at(r, f) = z; break;
        case Activation::Relu: out.at(r, f) = z > 0.0 ? z : 0.0; break;
        case Activation::Tanh: out.at(r, f) = std::tanh(z); break;
      }
    }
  }
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x, &filters, &bias, rows, nf, emb, span, act, pre = std::move(pre),
                       argmax = std::move(argmax)] {
    const auto& k = kernels::active();
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& y = nodes_[v.id].value;
    const Tensor& xv = nodes_[x.id].value;
    Tensor* gx = nodes_[x.id].constant ? nullptr : &grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < nf; ++f) {
        double d = g.at(r, f);
        switch (act) {
          case Activation::Identity: break;
          case Activation::Relu: d = pre.at(r, f) > 0.0 ? d : 0.0; break;
          case Activation::Tanh: d *= 1.0 - y.at(r, f) * y.at(r, f); break;
        }
        if (d == 0.0) continue;
        const std::size_t offset = argmax[r * nf + f] * emb;
        bias.grad[f] += d;
        k.axpy(d, xv.row(r) + offset, filters.grad.row(f), span);
        if (gx) k.axpy(d, filters.value.row(f), gx->row(r) + offset, span);
      }
    }
  };
  return v;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t rows = rows_of(value(parts[0]));
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    require_rows(rows_of(value(p)), rows, "concat_cols");
    widths.push_back(cols_of(value(p)));
    total += widths.back();
  }
  Tensor out({rows, total});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::copy_n(value(parts[i]).ptr() + r * widths[i], widths[i], out.row(r) + off);
      off += widths[i];
    }
  }
  Var v = push(std::move(out));
  std::vector<Var> kept(parts.begin(), parts.end());
  nodes_[v.id].back = [this, v, kept = std::move(kept), widths = std::move(widths), rows, total] {
    const Tensor& g = nodes_[v.id].grad;
    std::size_t off = 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (!nodes_[kept[i].id].constant) {
        Tensor& gp = grad_of(kept[i]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) gp[r * widths[i] + c] += g[r * total + off + c];
        }
      }
      off += widths[i];
    }
  };
  return v;
}

Var Tape::stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack_rows: nothing to stack");
  const std::size_t cols = cols_of(value(parts[0]));
  std::size_t total = 0;
  for (Var p : parts) {
    if (cols_of(value(p)) != cols) throw DimensionError("stack_rows: column count mismatch");
    total += rows_of(value(p));
  }
  Tensor out({total, cols});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    std::copy(pv.data().begin(), pv.data().end(), out.ptr() + off);
    off += pv.size();
  }
  Var v = push(std::move(out));
  std::vector<Var> kept(parts.begin(), parts.end());
  nodes_[v.id].back = [this, v, kept = std::move(kept)] {
    const Tensor& g = nodes_[v.id].grad;
    std::size_t off = 0;
    for (Var p : kept) {
      const std::size_t n = nodes_[p.id].value.size();
      if (!nodes_[p.id].constant) {
        Tensor& gp = grad_of(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  };
  return v;
}

Var Tape::slice_rows(Var x, std::size_t first, std::size_t count) {
  const Tensor& xv = value(x);
  const std::size_t cols = cols_of(xv);
  if (first + count > rows_of(xv)) throw DimensionError("slice_rows: range out of bounds");
  Tensor out({count, cols});
  std::copy_n(xv.ptr() + first * cols, count * cols, out.ptr());
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x, first, count, cols] {
    if (nodes_[x.id].constant) return;
    const Tensor& g = nodes_[v.id].grad;
    Tensor& gx = grad_of(x);
    for (std::size_t i = 0; i < count * cols; ++i) gx[first * cols + i] += g[i];
  };
  return v;
}

Var Tape::reshape(Var x, Shape shape) {
  Tensor out = value(x);
  out.reshape(std::move(shape));
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x] {
    if (nodes_[x.id].constant) return;
    const Tensor& g = nodes_[v.id].grad;
    Tensor& gx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return v;
}

Var Tape::sigmoid(Var x) {
  Tensor out = value(x);
  for (double& v : out.data()) v = sigmoid_of(v);
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x] {
    if (nodes_[x.id].constant) return;
    const Tensor& y = nodes_[v.id].value;
    const Tensor& g = nodes_[v.id].grad;
    Tensor& gx = grad_of(x);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  };
  return v;
}

Var Tape::tanh(Var x) {
  Tensor out = value(x);
  for (double& v : out.data()) v = std::tanh(v);
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x] {
    if (nodes_[x.id].constant) return;
    const Tensor& y = nodes_[v.id].value;
    const Tensor& g = nodes_[v.id].grad;
    Tensor& gx = grad_of(x);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  };
  return v;
}

Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x] {
    if (nodes_[x.id].constant) return;
    const Tensor& xv = nodes_[x.id].value;
    const Tensor& g = nodes_[v.id].grad;
    Tensor& gx = grad_of(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  };
  return v;
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, a, b] {
    const Tensor& g = nodes_[v.id].grad;
    for (Var p : {a, b}) {
      if (nodes_[p.id].constant) continue;
      Tensor& gp = grad_of(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  };
  return v;
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, a, b] {
    const Tensor& g = nodes_[v.id].grad;
    if (!nodes_[a.id].constant) {
      Tensor& ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (!nodes_[b.id].constant) {
      Tensor& gb = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return v;
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, a, b] {
    const Tensor& g = nodes_[v.id].grad;
    const Tensor& av = nodes_[a.id].value;
    const Tensor& bv = nodes_[b.id].value;
    if (!nodes_[a.id].constant) {
      Tensor& ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (!nodes_[b.id].constant) {
      Tensor& gb = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  };
  return v;
}

Var Tape::scale(Var x, double factor) {
  Tensor out = value(x);
  for (double& v : out.data()) v *= factor;
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x, factor] {
    if (nodes_[x.id].constant) return;
    const Tensor& g = nodes_[v.id].grad;
    Tensor& gx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  };
  return v;
}

Var Tape::mask(Var x, const Tensor& m) {
  if (value(x).size() != m.size()) throw DimensionError("mask: size mismatch");
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
  Var v = push(std::move(out));
  nodes_[v.id].back = [this, v, x, m] {
    if (nodes_[x.id].constant) return;
    const Tensor& g = nodes_[v.id].grad;
    Tensor& gx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * m[i];
  };
  return v;
}

Var Tape::softmax_xent(Var logits, std::span<const int> targets, std::span<const double> weights) {
  const Tensor& z = value(logits);
  const std::size_t rows = rows_of(z);
  const std::size_t classes = cols_of(z);
  require_rows(targets.size(), rows, "softmax_xent targets");
  require_rows(weights.size(), rows, "softmax_xent weights");
  Tensor probs({rows, classes});
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= classes) throw DimensionError("softmax_xent: target out of range");
    const double* zr = z.row(r);
    const double top = *std::max_element(zr, zr + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(zr[c] - top);
    const double lse = top + std::log(total);
    for (std::size_t c = 0; c < classes; ++c) probs.at(r, c) = std::exp(zr[c] - lse);
    loss += weights[r] * (lse - zr[t]);
  }
  Var v = push(Tensor({1}, std::vector<double>{loss}));
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> wt(weights.begin(), weights.end());
  nodes_[v.id].back = [this, v, logits, probs = std::move(probs), tg = std::move(tg), wt = std::move(wt), rows,
                       classes] {
    if (nodes_[logits.id].constant) return;
    const double g = nodes_[v.id].grad[0];
    Tensor& gz = grad_of(logits);
    for (std::size_t r = 0; r < rows; ++r) {
      const double s = g * wt[r];
      if (s == 0.0) continue;
      double* gr = gz.row(r);
      const double* pr = probs.row(r);
      for (std::size_t c = 0; c < classes; ++c) gr[c] += s * pr[c];
      gr[tg[r]] -= s;
    }
  };
  return v;
}

Var Tape::bce_logits(Var logits, std::span<const double> labels, std::span<const double> weights) {
  const Tensor& z = value(logits);
  require_rows(z.size(), labels.size(), "bce_logits labels");
  require_rows(weights.size(), labels.size(), "bce_logits weights");
  double loss = 0.0;
  for (std::size_t r = 0; r < z.size(); ++r) loss += weights[r] * (softplus(z[r]) - labels[r] * z[r]);
  Var v = push(Tensor({1}, std::vector<double>{loss}));
  std::vector<double> lb(labels.begin(), labels.end());
  std::vector<double> wt(weights.begin(), weights.end());
  nodes_[v.id].back = [this, v, logits, lb = std::move(lb), wt = std::move(wt)] {
    if (nodes_[logits.id].constant) return;
    const double g = nodes_[v.id].grad[0];
    const Tensor& z = nodes_[logits.id].value;
    Tensor& gz = grad_of(logits);
    for (std::size_t r = 0; r < z.size(); ++r) gz[r] += g * wt[r] * (sigmoid_of(z[r]) - lb[r]);
  };
  return v;
}

Var Tape::weighted_sum(Var x, std::span<const double> weights) {
  const Tensor& xv = value(x);
  require_rows(weights.size(), xv.size(), "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += weights[i] * xv[i];
  Var v = push(Tensor({1}, std::vector<double>{s}));
  std::vector<double> wt(weights.begin(), weights.end());
  nodes_[v.id].back = [this, v, x, wt = std::move(wt)] {
    if (nodes_[x.id].constant) return;
    const double g = nodes_[v.id].grad[0];
    Tensor& gx = grad_of(x);
    for (std::size_t i = 0; i < wt.size(); ++i) gx[i] += g * wt[i];
  };
  return v;
}

Var Tape::sum(Var x) {
  const Tensor& xv = value(x);
  double s = 0.0;
  for (double e : xv.data()) s += e;
  Var v = push(Tensor({1}, std::vector<double>{s}));
  nodes_[v.id].back = [this, v, x] {
    if (nodes_[x.id].constant) return;
    const double g = nodes_[v.id].grad[0];
    Tensor& gx = grad_of(x);
    for (double& e : gx.data()) e += g;
  };
  return v;
}

Var Tape::l2_penalty(std::span<Parameter* const> params, double coefficient) {
  if (coefficient < 0.0) throw ParameterError("l2_penalty: coefficient must be non-negative");
  double s = 0.0;
  for (const Parameter* p : params) {
    for (double w : p->value.data()) s += w * w;
  }
  Var v = push(Tensor({1}, std::vector<double>{coefficient * s}));
  std::vector<Parameter*> kept(params.begin(), params.end());
  nodes_[v.id].back = [this, v, kept = std::move(kept), coefficient] {
    const double g = nodes_[v.id].grad[0] * 2.0 * coefficient;
    for (Parameter* p : kept) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += g * p->value[i];
    }
  };
  return v;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw UsageError("backward called before any forward computation");
  Node& target = node(loss);
  if (target.value.size() != 1) throw UsageError("backward target must be a scalar");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_of(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.back) continue;
    n.back();
  }
}

void Tape::clear() { nodes_.clear(); }

}  // namespace organ::nn
