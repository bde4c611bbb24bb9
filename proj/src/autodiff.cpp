// SPDX-License-Identifier: Apache-2.0

#include "hiertag/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace hiertag {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

MatMap as_matrix(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
ArrMap as_array(Tensor& t) {
  return ArrMap(t.data(), static_cast<Eigen::Index>(t.size()));
}
ConstArrMap as_array(const Tensor& t) {
  return ConstArrMap(t.data(), static_cast<Eigen::Index>(t.size()));
}

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractError("operands recorded on different tapes");
  }
  return *a.tape;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

std::size_t last_extent(const Tensor& t) {
  if (t.rank() == 0) throw DimensionError("rank-0 tensor has no last axis");
  return t.shape().back();
}

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::leaf(Tensor value) { return record(std::move(value), true, nullptr); }

Var Tape::param(Parameter& p) {
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  Node node;
  node.ref = &p.value;
  node.grad_sink = &p.grad;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad_sink) return *n.grad_sink;
  if (!n.grad_touched) return Tensor(n.value().shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad_sink) {
    n.grad_touched = true;
    return *n.grad_sink;
  }
  if (!n.grad_touched) {
    n.grad = Tensor(n.value().shape());
    n.grad_touched = true;
  }
  return n.grad;
}

bool Tape::has_grad(std::size_t id) const { return nodes_[id].grad_touched; }

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss is not on this tape");
  if (backward_done_) throw ContractError("backward: tape already backpropagated");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(value(loss.id).shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_touched && n.backward) n.backward(*this, i);
  }
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(av.shape()) +
                         " and " + shape_str(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.record(std::move(out), rg, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const auto g = as_matrix(std::as_const(tp.grad_buffer(self)));
    if (tp.requires_grad(ia)) {
      as_matrix(tp.grad_buffer(ia)).noalias() += g * as_matrix(tp.value(ib)).transpose();
    }
    if (tp.requires_grad(ib)) {
      as_matrix(tp.grad_buffer(ib)).noalias() += as_matrix(tp.value(ia)).transpose() * g;
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out(a.shape());
  as_array(out) = as_array(a.value()) + as_array(b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.record(std::move(out), rg, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const auto g = as_array(std::as_const(tp.grad_buffer(self)));
    if (tp.requires_grad(ia)) as_array(tp.grad_buffer(ia)) += g;
    if (tp.requires_grad(ib)) as_array(tp.grad_buffer(ib)) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out(a.shape());
  as_array(out) = as_array(a.value()) - as_array(b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.record(std::move(out), rg, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const auto g = as_array(std::as_const(tp.grad_buffer(self)));
    if (tp.requires_grad(ia)) as_array(tp.grad_buffer(ia)) += g;
    if (tp.requires_grad(ib)) as_array(tp.grad_buffer(ib)) -= g;
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out(a.shape());
  as_array(out) = as_array(a.value()) * as_array(b.value());
  const bool rg = t.requires_grad(a.id) || t.requires_grad(b.id);
  return t.record(std::move(out), rg, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const auto g = as_array(std::as_const(tp.grad_buffer(self)));
    if (tp.requires_grad(ia)) as_array(tp.grad_buffer(ia)) += g * as_array(tp.value(ib));
    if (tp.requires_grad(ib)) as_array(tp.grad_buffer(ib)) += g * as_array(tp.value(ia));
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Tensor out(a.shape());
  as_array(out) = 1.0 / (1.0 + (-as_array(a.value())).exp());
  return t.record(std::move(out), t.requires_grad(a.id), [ia = a.id](Tape& tp, std::size_t self) {
    const auto g = as_array(std::as_const(tp.grad_buffer(self)));
    const auto s = as_array(tp.value(self));
    as_array(tp.grad_buffer(ia)) += g * s * (1.0 - s);
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  Tensor out(a.shape());
  as_array(out) = as_array(a.value()).tanh();
  return t.record(std::move(out), t.requires_grad(a.id), [ia = a.id](Tape& tp, std::size_t self) {
    const auto g = as_array(std::as_const(tp.grad_buffer(self)));
    const auto y = as_array(tp.value(self));
    as_array(tp.grad_buffer(ia)) += g * (1.0 - y * y);
  });
}

Var scale(Var a, double factor) {
  Tape& t = *a.tape;
  Tensor out(a.shape());
  as_array(out) = as_array(a.value()) * factor;
  return t.record(std::move(out), t.requires_grad(a.id),
                  [ia = a.id, factor](Tape& tp, std::size_t self) {
                    as_array(tp.grad_buffer(ia)) +=
                        as_array(std::as_const(tp.grad_buffer(self))) * factor;
                  });
}

Var add_row(Var a, Var bias) {
  Tape& t = same_tape(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.size() != av.cols()) {
    throw DimensionError("add_row: bias " + shape_str(bv.shape()) + " does not match " +
                         shape_str(av.shape()));
  }
  Tensor out(av.shape());
  as_matrix(out) = as_matrix(av).rowwise() + as_matrix(bv).row(0);
  const bool rg = t.requires_grad(a.id) || t.requires_grad(bias.id);
  return t.record(std::move(out), rg, [ia = a.id, ib = bias.id](Tape& tp, std::size_t self) {
    const auto g = as_matrix(std::as_const(tp.grad_buffer(self)));
    if (tp.requires_grad(ia)) as_matrix(tp.grad_buffer(ia)) += g;
    if (tp.requires_grad(ib)) as_matrix(tp.grad_buffer(ib)).row(0) += g.colwise().sum();
  });
}

Var softmax(Var logits) {
  Tape& t = *logits.tape;
  const Tensor& x = logits.value();
  const std::size_t n = last_extent(x);
  if (n == 0) throw DimensionError("softmax: empty last axis");
  Tensor out(x.shape());
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * n;
    double* o = out.data() + r * n;
    const double m = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  return t.record(std::move(out), t.requires_grad(logits.id),
                  [ix = logits.id, n, rows](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    const Tensor& q = tp.value(self);
                    Tensor& dx = tp.grad_buffer(ix);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double* gr = g.data() + r * n;
                      const double* qr = q.data() + r * n;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * qr[j];
                      double* d = dx.data() + r * n;
                      for (std::size_t j = 0; j < n; ++j) d[j] += qr[j] * (gr[j] - dot);
                    }
                  });
}

namespace {

std::size_t count_targets(std::span<const int> targets, std::size_t rows, std::size_t n,
                          const char* op) {
  if (targets.size() != rows) {
    throw DimensionError(std::string(op) + ": " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  }
  std::size_t count = 0;
  for (int y : targets) {
    if (y < 0) continue;
    if (static_cast<std::size_t>(y) >= n) {
      throw IndexError(std::string(op) + ": target " + std::to_string(y) +
                       " out of range for " + std::to_string(n) + " labels");
    }
    ++count;
  }
  if (count == 0) throw ContractError(std::string(op) + ": no valid target positions");
  return count;
}

}  // namespace

Var cross_entropy(Var probs, std::span<const int> targets) {
  Tape& t = *probs.tape;
  const Tensor& q = probs.value();
  const std::size_t n = last_extent(q);
  const std::size_t rows = q.size() / n;
  const std::size_t count = count_targets(targets, rows, n, "cross_entropy");
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    loss -= std::log(std::max(q[r * n + targets[r]], kProbabilityFloor));
  }
  loss /= static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record(Tensor::scalar(loss), t.requires_grad(probs.id),
                  [iq = probs.id, n, rows, count, tg = std::move(tg)](Tape& tp, std::size_t self) {
                    const double g = tp.grad_buffer(self)[0] / static_cast<double>(count);
                    const Tensor& qv = tp.value(iq);
                    Tensor& dq = tp.grad_buffer(iq);
                    for (std::size_t r = 0; r < rows; ++r) {
                      if (tg[r] < 0) continue;
                      const double p = qv[r * n + tg[r]];
                      if (p > kProbabilityFloor) dq[r * n + tg[r]] -= g / p;
                    }
                  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  Tape& t = *logits.tape;
  const Tensor& x = logits.value();
  const std::size_t n = last_extent(x);
  const std::size_t rows = x.size() / n;
  const std::size_t count = count_targets(targets, rows, n, "softmax_cross_entropy");
  // Probabilities are only kept for rows that carry a target.
  std::vector<std::size_t> active;
  active.reserve(count);
  Tensor q({count, n});
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0) continue;
    const double* in = x.data() + r * n;
    double* o = q.data() + active.size() * n;
    const double m = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
    loss -= std::log(std::max(o[targets[r]], kProbabilityFloor));
    active.push_back(r);
  }
  loss /= static_cast<double>(count);
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record(Tensor::scalar(loss), t.requires_grad(logits.id),
                  [ix = logits.id, n, count, q = std::move(q), active = std::move(active),
                   tg = std::move(tg)](Tape& tp, std::size_t self) {
                    const double g = tp.grad_buffer(self)[0] / static_cast<double>(count);
                    Tensor& dx = tp.grad_buffer(ix);
                    for (std::size_t k = 0; k < active.size(); ++k) {
                      const std::size_t r = active[k];
                      double* d = dx.data() + r * n;
                      const double* qr = q.data() + k * n;
                      for (std::size_t j = 0; j < n; ++j) d[j] += g * qr[j];
                      d[tg[r]] -= g;
                    }
                  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  Tape& t = *parts.front().tape;
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("concat: operands on different tapes");
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " +
                           shape_str(s) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    rg = rg || t.requires_grad(p.id);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::vector<std::size_t> inner;
  std::vector<std::size_t> ids;
  std::size_t total_inner = 0;
  for (const Var& p : parts) {
    const std::size_t blk = outer ? p.value().size() / std::max<std::size_t>(outer, 1) : 0;
    inner.push_back(blk);
    ids.push_back(p.id);
    total_inner += blk;
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = o * total_inner;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].value().data() + o * inner[k];
      std::copy(src, src + inner[k], out.data() + off);
      off += inner[k];
    }
  }
  return t.record(std::move(out), rg,
                  [ids = std::move(ids), inner = std::move(inner), outer, total_inner](
                      Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    std::size_t col = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (tp.requires_grad(ids[k])) {
                        Tensor& d = tp.grad_buffer(ids[k]);
                        for (std::size_t o = 0; o < outer; ++o) {
                          const double* src = g.data() + o * total_inner + col;
                          double* dst = d.data() + o * inner[k];
                          for (std::size_t j = 0; j < inner[k]; ++j) dst[j] += src[j];
                        }
                      }
                      col += inner[k];
                    }
                  });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  if (av.rank() != 2 || begin + count > av.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_str(av.shape()));
  }
  const std::size_t c = av.cols();
  Tensor out({count, c});
  std::copy(av.data() + begin * c, av.data() + (begin + count) * c, out.data());
  return t.record(std::move(out), t.requires_grad(a.id),
                  [ia = a.id, begin, count, c](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    double* dst = tp.grad_buffer(ia).data() + begin * c;
                    for (std::size_t j = 0; j < count * c; ++j) dst[j] += g[j];
                  });
}

Var embedding_lookup(Var table, std::span<const std::size_t> ids) {
  Tape& t = *table.tape;
  const Tensor& tv = table.value();
  if (tv.rank() != 2) {
    throw DimensionError("embedding_lookup: table must be rank 2, got " + shape_str(tv.shape()));
  }
  const std::size_t v = tv.rows();
  const std::size_t d = tv.cols();
  for (std::size_t id : ids) {
    if (id >= v) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) +
                       " out of range for table with V=" + std::to_string(v));
    }
  }
  Tensor out({ids.size(), d});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    std::copy(tv.data() + ids[k] * d, tv.data() + (ids[k] + 1) * d, out.data() + k * d);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return t.record(std::move(out), t.requires_grad(table.id),
                  [it = table.id, d, idv = std::move(idv)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    Tensor& dt = tp.grad_buffer(it);
                    for (std::size_t k = 0; k < idv.size(); ++k) {
                      double* dst = dt.data() + idv[k] * d;
                      const double* src = g.data() + k * d;
                      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                  });
}

Var where_rows(std::span<const double> mask, Var on, Var off) {
  Tape& t = same_tape(on, off);
  require_same_shape("where_rows", on.value(), off.value());
  const std::size_t rows = on.value().rows();
  const std::size_t c = on.value().cols();
  if (mask.size() != rows) {
    throw DimensionError("where_rows: mask length " + std::to_string(mask.size()) +
                         " for " + std::to_string(rows) + " rows");
  }
  Tensor out(on.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Tensor& src = mask[r] != 0.0 ? on.value() : off.value();
    std::copy(src.data() + r * c, src.data() + (r + 1) * c, out.data() + r * c);
  }
  std::vector<double> m(mask.begin(), mask.end());
  const bool rg = t.requires_grad(on.id) || t.requires_grad(off.id);
  return t.record(std::move(out), rg,
                  [ion = on.id, ioff = off.id, c, m = std::move(m)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    for (std::size_t r = 0; r < m.size(); ++r) {
                      const std::size_t target = m[r] != 0.0 ? ion : ioff;
                      if (!tp.requires_grad(target)) continue;
                      double* dst = tp.grad_buffer(target).data() + r * c;
                      for (std::size_t j = 0; j < c; ++j) dst[j] += g[r * c + j];
                    }
                  });
}

Var scale_rows(Var x, std::span<const double> weights) {
  Tape& t = *x.tape;
  const std::size_t rows = x.value().rows();
  const std::size_t c = x.value().cols();
  if (weights.size() != rows) {
    throw DimensionError("scale_rows: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(rows) + " rows");
  }
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = x.value()[r * c + j] * weights[r];
  }
  std::vector<double> w(weights.begin(), weights.end());
  return t.record(std::move(out), t.requires_grad(x.id),
                  [ix = x.id, c, w = std::move(w)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_buffer(self);
                    Tensor& dx = tp.grad_buffer(ix);
                    for (std::size_t r = 0; r < w.size(); ++r) {
                      for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += g[r * c + j] * w[r];
                    }
                  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const double s = as_array(a.value()).sum();
  return t.record(Tensor::scalar(s), t.requires_grad(a.id), [ia = a.id](Tape& tp, std::size_t self) {
    as_array(tp.grad_buffer(ia)) += tp.grad_buffer(self)[0];
  });
}

}  // namespace hiertag
