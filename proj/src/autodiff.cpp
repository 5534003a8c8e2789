/*
 * Copyright 2026 The ssfa-lab Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "ssfa/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ssfa::ad {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

// Every op views its operands as (rows, cols); scalars are 1x1 and vectors
// 1xn, which keeps the rowwise ops uniform.
std::pair<int, int> as_2d(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a) {
  throw std::invalid_argument(std::string(op) + ": invalid shape " + shape_str(a));
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

Param::Param(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)) {
  value.assign(static_cast<size_t>(numel(shape)), 0.0);
  grad.assign(value.size(), 0.0);
}

void Param::zero_grad() {
  std::fill(grad.begin(), grad.end(), 0.0);
  grad_valid = false;
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kScale: return "scale";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kL2Normalize: return "l2_normalize";
    case OpKind::kExp: return "exp";
    case OpKind::kNegEntropy: return "neg_entropy";
  }
  return "?";
}

Graph::Graph() {
  nodes_.reserve(64);
  ops_.reserve(64);
}

int Graph::add_node(Shape shape, std::vector<double> val) {
  if (numel(shape) != static_cast<int64_t>(val.size()))
    throw std::logic_error("internal: node data does not match shape " + shape_str(shape));
  nodes_.push_back(Node{std::move(shape), std::move(val), {}, nullptr, false});
  return static_cast<int>(nodes_.size()) - 1;
}

const Graph::Node& Graph::node(Value v) const {
  check_mine(v, "node");
  return nodes_[static_cast<size_t>(v.id())];
}

void Graph::check_mine(Value v, const char* op) const {
  if (!v.valid() || v.g_ != this || v.id() < 0 ||
      v.id() >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument(std::string(op) + ": value does not belong to this graph");
}

Value Graph::leaf(Param& p, bool trainable) {
  for (const auto& [key, id] : leaf_cache_)
    if (key.first == &p && key.second == trainable) return wrap(id);
  int id = add_node(p.shape, p.value);
  nodes_[static_cast<size_t>(id)].param = &p;
  nodes_[static_cast<size_t>(id)].trainable = trainable;
  leaf_cache_.push_back({{&p, trainable}, id});
  return wrap(id);
}

Value Graph::constant(Shape shape, std::vector<double> data) {
  if (numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("constant: data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  return wrap(add_node(std::move(shape), std::move(data)));
}

Value Graph::scalar(double v) { return constant({}, {v}); }

const Shape& Graph::shape(Value v) const { return node(v).shape; }
const std::vector<double>& Graph::value(Value v) const { return node(v).val; }

const std::vector<double>& Graph::node_grad(Value v) const {
  const Node& n = node(v);
  if (n.grad.size() != n.val.size())
    throw std::logic_error("node_grad: backward has not populated this node");
  return n.grad;
}

double Graph::item(Value v) const {
  const Node& n = node(v);
  if (n.val.size() != 1)
    throw std::invalid_argument("item: tensor of shape " + shape_str(n.shape) + " is not scalar");
  return n.val[0];
}

Value Graph::matmul(Value a, Value b, bool transpose_b) {
  check_mine(a, "matmul");
  check_mine(b, "matmul");
  const Shape& sa = nodes_[a.id()].shape;
  const Shape& sb = nodes_[b.id()].shape;
  if (sa.size() != 2 || sb.size() != 2) shape_error("matmul", sa, sb);
  int m = sa[0], k = sa[1];
  int bk = transpose_b ? sb[1] : sb[0];
  int n = transpose_b ? sb[0] : sb[1];
  if (k != bk) shape_error("matmul", sa, sb);

  std::vector<double> out(static_cast<size_t>(m) * n);
  CMapM A(nodes_[a.id()].val.data(), m, k);
  MapM C(out.data(), m, n);
  if (transpose_b) {
    CMapM B(nodes_[b.id()].val.data(), n, k);
    C.noalias() = A * B.transpose();
  } else {
    CMapM B(nodes_[b.id()].val.data(), k, n);
    C.noalias() = A * B;
  }
  int id = add_node({m, n}, std::move(out));
  ops_.push_back({OpKind::kMatmul, {a.id(), b.id()}, id, 0.0, 0, 0, transpose_b, {}});
  return wrap(id);
}

Value Graph::add(Value a, Value b) {
  check_mine(a, "add");
  check_mine(b, "add");
  const Shape& sa = nodes_[a.id()].shape;
  const Shape& sb = nodes_[b.id()].shape;
  bool broadcast = sa.size() == 2 && sb.size() == 1 && sb[0] == sa[1];
  if (!broadcast && sa != sb) shape_error("add", sa, sb);

  const auto& va = nodes_[a.id()].val;
  const auto& vb = nodes_[b.id()].val;
  std::vector<double> out(va.size());
  if (broadcast) {
    int m = sa[0], n = sa[1];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out[static_cast<size_t>(i) * n + j] = va[static_cast<size_t>(i) * n + j] + vb[j];
  } else {
    for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
  }
  int id = add_node(sa, std::move(out));
  ops_.push_back({OpKind::kAdd, {a.id(), b.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::mul(Value a, Value b) {
  check_mine(a, "mul");
  check_mine(b, "mul");
  const Shape& sa = nodes_[a.id()].shape;
  const Shape& sb = nodes_[b.id()].shape;
  if (sa != sb) shape_error("mul", sa, sb);
  const auto& va = nodes_[a.id()].val;
  const auto& vb = nodes_[b.id()].val;
  std::vector<double> out(va.size());
  for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
  int id = add_node(sa, std::move(out));
  ops_.push_back({OpKind::kMul, {a.id(), b.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::relu(Value a) {
  check_mine(a, "relu");
  const auto& va = nodes_[a.id()].val;
  std::vector<double> out(va.size());
  for (size_t i = 0; i < va.size(); ++i) out[i] = va[i] > 0.0 ? va[i] : 0.0;
  int id = add_node(nodes_[a.id()].shape, std::move(out));
  ops_.push_back({OpKind::kRelu, {a.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::log_softmax(Value a) {
  check_mine(a, "log_softmax");
  const Shape& sa = nodes_[a.id()].shape;
  if (sa.size() != 2) shape_error("log_softmax", sa);
  auto [m, n] = as_2d(sa);
  const auto& va = nodes_[a.id()].val;
  std::vector<double> out(va.size());
  for (int i = 0; i < m; ++i) {
    const double* row = &va[static_cast<size_t>(i) * n];
    double* orow = &out[static_cast<size_t>(i) * n];
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    for (int j = 0; j < n; ++j) orow[j] = row[j] - lse;
  }
  int id = add_node(sa, std::move(out));
  ops_.push_back({OpKind::kLogSoftmax, {a.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::softmax(Value a) {
  check_mine(a, "softmax");
  const Shape& sa = nodes_[a.id()].shape;
  if (sa.size() != 2) shape_error("softmax", sa);
  auto [m, n] = as_2d(sa);
  const auto& va = nodes_[a.id()].val;
  std::vector<double> out(va.size());
  for (int i = 0; i < m; ++i) {
    const double* row = &va[static_cast<size_t>(i) * n];
    double* orow = &out[static_cast<size_t>(i) * n];
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= s;
  }
  int id = add_node(sa, std::move(out));
  ops_.push_back({OpKind::kSoftmax, {a.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::mean(Value a) {
  check_mine(a, "mean");
  const auto& va = nodes_[a.id()].val;
  if (va.empty()) shape_error("mean", nodes_[a.id()].shape);
  double s = 0.0;
  for (double v : va) s += v;
  int id = add_node({}, {s / static_cast<double>(va.size())});
  ops_.push_back({OpKind::kMean, {a.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::sum(Value a) {
  check_mine(a, "sum");
  const auto& va = nodes_[a.id()].val;
  double s = 0.0;
  for (double v : va) s += v;
  int id = add_node({}, {s});
  ops_.push_back({OpKind::kSum, {a.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::scale(Value a, double c) {
  check_mine(a, "scale");
  const auto& va = nodes_[a.id()].val;
  std::vector<double> out(va.size());
  for (size_t i = 0; i < va.size(); ++i) out[i] = c * va[i];
  int id = add_node(nodes_[a.id()].shape, std::move(out));
  ops_.push_back({OpKind::kScale, {a.id()}, id, c, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::concat(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (Value v : parts) check_mine(v, "concat");
  const Shape& s0 = nodes_[parts[0].id()].shape;
  if (s0.size() != 2) shape_error("concat", s0);
  int n = s0[1];
  int rows = 0;
  for (Value v : parts) {
    const Shape& s = nodes_[v.id()].shape;
    if (s.size() != 2 || s[1] != n) shape_error("concat", s0, s);
    rows += s[0];
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows) * n);
  std::vector<int> ins;
  for (Value v : parts) {
    const auto& pv = nodes_[v.id()].val;
    out.insert(out.end(), pv.begin(), pv.end());
    ins.push_back(v.id());
  }
  int id = add_node({rows, n}, std::move(out));
  ops_.push_back({OpKind::kConcat, std::move(ins), id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::slice(Value a, int row0, int row1) {
  check_mine(a, "slice");
  const Shape& sa = nodes_[a.id()].shape;
  if (sa.size() != 2) shape_error("slice", sa);
  if (row0 < 0 || row1 > sa[0] || row0 >= row1)
    throw std::invalid_argument("slice: rows [" + std::to_string(row0) + "," +
                                std::to_string(row1) + ") out of range for shape " +
                                shape_str(sa));
  int n = sa[1];
  const auto& va = nodes_[a.id()].val;
  std::vector<double> out(va.begin() + static_cast<size_t>(row0) * n,
                          va.begin() + static_cast<size_t>(row1) * n);
  int id = add_node({row1 - row0, n}, std::move(out));
  ops_.push_back({OpKind::kSlice, {a.id()}, id, 0.0, row0, row1, false, {}});
  return wrap(id);
}

Value Graph::l2_normalize(Value a) {
  check_mine(a, "l2_normalize");
  const Shape& sa = nodes_[a.id()].shape;
  if (sa.size() != 2) shape_error("l2_normalize", sa);
  auto [m, n] = as_2d(sa);
  const auto& va = nodes_[a.id()].val;
  std::vector<double> out(va.size());
  std::vector<double> norms(static_cast<size_t>(m));
  constexpr double kEps = 1e-12;
  for (int i = 0; i < m; ++i) {
    const double* row = &va[static_cast<size_t>(i) * n];
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += row[j] * row[j];
    double r = std::max(std::sqrt(s), kEps);
    norms[static_cast<size_t>(i)] = r;
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = row[j] / r;
  }
  int id = add_node(sa, std::move(out));
  ops_.push_back({OpKind::kL2Normalize, {a.id()}, id, 0.0, 0, 0, false, std::move(norms)});
  return wrap(id);
}

Value Graph::exp(Value a) {
  check_mine(a, "exp");
  const auto& va = nodes_[a.id()].val;
  std::vector<double> out(va.size());
  for (size_t i = 0; i < va.size(); ++i) out[i] = std::exp(va[i]);
  int id = add_node(nodes_[a.id()].shape, std::move(out));
  ops_.push_back({OpKind::kExp, {a.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

Value Graph::neg_entropy(Value a) {
  check_mine(a, "neg_entropy");
  const Shape& sa = nodes_[a.id()].shape;
  if (sa.size() != 2) shape_error("neg_entropy", sa);
  auto [m, n] = as_2d(sa);
  const auto& va = nodes_[a.id()].val;
  std::vector<double> out(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      double p = va[static_cast<size_t>(i) * n + j];
      if (p > 0.0) s += p * std::log(p);
    }
    out[static_cast<size_t>(i)] = s;
  }
  int id = add_node({m}, std::move(out));
  ops_.push_back({OpKind::kNegEntropy, {a.id()}, id, 0.0, 0, 0, false, {}});
  return wrap(id);
}

void Graph::backward(Value loss) {
  check_mine(loss, "backward");
  const Node& ln = nodes_[loss.id()];
  if (ln.val.size() != 1 || !ln.shape.empty())
    throw std::invalid_argument("backward: loss has shape " + shape_str(ln.shape) +
                                ", expected a scalar");

  for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
  nodes_[loss.id()].grad[0] = 1.0;

  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    const OpRec& op = *it;
    Node& out = nodes_[static_cast<size_t>(op.out)];
    const std::vector<double>& g = out.grad;
    switch (op.kind) {
      case OpKind::kMatmul: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        Node& nb = nodes_[static_cast<size_t>(op.in[1])];
        int m = na.shape[0], k = na.shape[1];
        int n = out.shape[1];
        CMapM G(g.data(), m, n);
        CMapM A(na.val.data(), m, k);
        MapM GA(na.grad.data(), m, k);
        if (op.trans_b) {
          CMapM B(nb.val.data(), n, k);
          MapM GB(nb.grad.data(), n, k);
          GA.noalias() += G * B;
          GB.noalias() += G.transpose() * A;
        } else {
          CMapM B(nb.val.data(), k, n);
          MapM GB(nb.grad.data(), k, n);
          GA.noalias() += G * B.transpose();
          GB.noalias() += A.transpose() * G;
        }
        break;
      }
      case OpKind::kAdd: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        Node& nb = nodes_[static_cast<size_t>(op.in[1])];
        for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
        if (nb.shape == na.shape) {
          for (size_t i = 0; i < g.size(); ++i) nb.grad[i] += g[i];
        } else {  // row broadcast
          int m = na.shape[0], n = na.shape[1];
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              nb.grad[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * n + j];
        }
        break;
      }
      case OpKind::kMul: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        Node& nb = nodes_[static_cast<size_t>(op.in[1])];
        for (size_t i = 0; i < g.size(); ++i) {
          na.grad[i] += g[i] * nb.val[i];
          nb.grad[i] += g[i] * na.val[i];
        }
        break;
      }
      case OpKind::kRelu: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        for (size_t i = 0; i < g.size(); ++i)
          if (na.val[i] > 0.0) na.grad[i] += g[i];
        break;
      }
      case OpKind::kLogSoftmax: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        auto [m, n] = as_2d(na.shape);
        for (int i = 0; i < m; ++i) {
          const double* grow = &g[static_cast<size_t>(i) * n];
          const double* yrow = &out.val[static_cast<size_t>(i) * n];
          double gs = 0.0;
          for (int j = 0; j < n; ++j) gs += grow[j];
          double* arow = &na.grad[static_cast<size_t>(i) * n];
          for (int j = 0; j < n; ++j) arow[j] += grow[j] - std::exp(yrow[j]) * gs;
        }
        break;
      }
      case OpKind::kSoftmax: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        auto [m, n] = as_2d(na.shape);
        for (int i = 0; i < m; ++i) {
          const double* grow = &g[static_cast<size_t>(i) * n];
          const double* yrow = &out.val[static_cast<size_t>(i) * n];
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += grow[j] * yrow[j];
          double* arow = &na.grad[static_cast<size_t>(i) * n];
          for (int j = 0; j < n; ++j) arow[j] += yrow[j] * (grow[j] - dot);
        }
        break;
      }
      case OpKind::kMean: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        double gv = g[0] / static_cast<double>(na.val.size());
        for (size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += gv;
        break;
      }
      case OpKind::kSum: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        for (size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += g[0];
        break;
      }
      case OpKind::kScale: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        for (size_t i = 0; i < g.size(); ++i) na.grad[i] += op.c * g[i];
        break;
      }
      case OpKind::kConcat: {
        size_t off = 0;
        for (int in_id : op.in) {
          Node& na = nodes_[static_cast<size_t>(in_id)];
          for (size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += g[off + i];
          off += na.grad.size();
        }
        break;
      }
      case OpKind::kSlice: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        int n = na.shape[1];
        size_t off = static_cast<size_t>(op.a0) * n;
        for (size_t i = 0; i < g.size(); ++i) na.grad[off + i] += g[i];
        break;
      }
      case OpKind::kL2Normalize: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        auto [m, n] = as_2d(na.shape);
        for (int i = 0; i < m; ++i) {
          double r = op.saved[static_cast<size_t>(i)];
          const double* grow = &g[static_cast<size_t>(i) * n];
          const double* yrow = &out.val[static_cast<size_t>(i) * n];
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += grow[j] * yrow[j];
          double* arow = &na.grad[static_cast<size_t>(i) * n];
          for (int j = 0; j < n; ++j) arow[j] += (grow[j] - yrow[j] * dot) / r;
        }
        break;
      }
      case OpKind::kExp: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        for (size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * out.val[i];
        break;
      }
      case OpKind::kNegEntropy: {
        Node& na = nodes_[static_cast<size_t>(op.in[0])];
        auto [m, n] = as_2d(na.shape);
        for (int i = 0; i < m; ++i) {
          double gi = g[static_cast<size_t>(i)];
          for (int j = 0; j < n; ++j) {
            double p = na.val[static_cast<size_t>(i) * n + j];
            if (p > 0.0) na.grad[static_cast<size_t>(i) * n + j] += gi * (std::log(p) + 1.0);
          }
        }
        break;
      }
    }
  }

  for (auto& n : nodes_) {
    if (n.param != nullptr && n.trainable) {
      for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
      n.param->grad_valid = true;
    }
  }
}

namespace {
std::atomic<uint64_t> g_sgd_steps{0};
}  // namespace

uint64_t sgd_step_count() { return g_sgd_steps.load(std::memory_order_relaxed); }

void sgd_step(const std::vector<Param*>& params, double lr) {
  g_sgd_steps.fetch_add(1, std::memory_order_relaxed);
  for (Param* p : params)
    if (!p->grad_valid)
      throw std::runtime_error("sgd_step: parameter '" + p->name + "' has no gradient");
  for (Param* p : params)
    for (size_t i = 0; i < p->value.size(); ++i) p->value[i] -= lr * p->grad[i];
}

void zero_grad(const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
}

double grad_check(const std::function<Value(Graph&)>& loss_builder,
                  const std::vector<Param*>& params, double fd_step) {
  zero_grad(params);
  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Value loss = loss_builder(g);
    g.backward(loss);
  }
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  auto eval = [&]() {
    Graph g;
    return g.item(loss_builder(g));
  };

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (size_t i = 0; i < p.value.size(); ++i) {
      double saved = p.value[i];
      auto at = [&](double x) {
        p.value[i] = x;
        return eval();
      };
      // fourth-order central stencil keeps the truncation error negligible
      // next to the cancellation noise
      double numeric = (8.0 * (at(saved + fd_step) - at(saved - fd_step)) -
                        (at(saved + 2.0 * fd_step) - at(saved - 2.0 * fd_step))) /
                       (12.0 * fd_step);
      p.value[i] = saved;
      double a = analytic[pi][i];
      if (!std::isfinite(numeric) || !std::isfinite(a))
        throw std::runtime_error("grad_check: non-finite gradient for parameter '" +
                                 p.name + "' at index " + std::to_string(i));
      double rel = std::abs(a - numeric) /
                   std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace ssfa::ad
