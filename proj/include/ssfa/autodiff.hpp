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
#pragma once

#include <functional>
#include <string>
#include <vector>

namespace ssfa::ad {

// Shapes are rank 0 (scalar), 1 (vector) or 2 (row-major matrix).
using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// A named parameter tensor living outside any graph. Graphs borrow it as a
// leaf; backward() accumulates into `grad` when the leaf was trainable.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool grad_valid = false;

  Param() = default;
  Param(std::string n, Shape s);
  size_t size() const { return value.size(); }
  void zero_grad();
};

enum class OpKind {
  kMatmul,
  kAdd,
  kMul,
  kRelu,
  kLogSoftmax,
  kSoftmax,
  kMean,
  kSum,
  kScale,
  kConcat,
  kSlice,
  kL2Normalize,
  kExp,
  kNegEntropy,
};

const char* op_name(OpKind k);

class Graph;

// Handle to a node inside one Graph. Cheap to copy, invalid once the graph
// is destroyed.
class Value {
 public:
  Value() = default;
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

 private:
  friend class Graph;
  Value(Graph* g, int id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Operations are recorded in execution order, which is a
// topological order by construction; backward() replays them exactly once in
// reverse. Nodes are never mutated after being recorded.
class Graph {
 public:
  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves. A Param may be bound twice, once trainable and once frozen;
  // calls are memoized per (param, trainable) pair.
  Value leaf(Param& p, bool trainable);
  Value constant(Shape shape, std::vector<double> data);
  Value scalar(double v);

  // Ops. Shape mismatches throw std::invalid_argument naming the op and the
  // offending shapes.
  Value matmul(Value a, Value b, bool transpose_b = false);
  Value add(Value a, Value b);  // same shape, or [m,n] + [n] row broadcast
  Value mul(Value a, Value b);  // elementwise, same shape
  Value relu(Value a);
  Value log_softmax(Value a);  // rowwise, max-subtracted
  Value softmax(Value a);      // rowwise
  Value mean(Value a);         // -> scalar
  Value sum(Value a);          // -> scalar
  Value scale(Value a, double c);
  Value concat(const std::vector<Value>& parts);  // along rows
  Value slice(Value a, int row0, int row1);       // rows [row0, row1)
  Value l2_normalize(Value a);                    // rowwise
  Value exp(Value a);
  Value neg_entropy(Value a);  // [m,n] probabilities -> [m], sum_j p log p

  // Seeds d(loss)/d(loss) = 1 and accumulates into every trainable Param
  // reachable from `loss`. Throws on non-scalar loss.
  void backward(Value loss);

  const Shape& shape(Value v) const;
  const std::vector<double>& value(Value v) const;
  // Node-level gradient; valid after backward(). Used by the diagnostics.
  const std::vector<double>& node_grad(Value v) const;
  double item(Value v) const;  // scalar read

  size_t num_nodes() const { return nodes_.size(); }
  size_t num_ops() const { return ops_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // sized during backward
    Param* param = nullptr;
    bool trainable = false;
  };
  struct OpRec {
    OpKind kind;
    std::vector<int> in;
    int out = -1;
    double c = 0.0;    // kScale factor
    int a0 = 0, a1 = 0;  // kSlice rows
    bool trans_b = false;
    std::vector<double> saved;  // per-op stash (softmax rows, l2 norms, ...)
  };

  int add_node(Shape shape, std::vector<double> val);
  Value wrap(int id) { return Value(this, id); }
  const Node& node(Value v) const;
  void check_mine(Value v, const char* op) const;

  std::vector<Node> nodes_;
  std::vector<OpRec> ops_;
  std::vector<std::pair<std::pair<Param*, bool>, int>> leaf_cache_;
};

// One plain SGD update: value -= lr * grad for every param in the subset.
// Throws if any param in the subset has no populated gradient.
void sgd_step(const std::vector<Param*>& params, double lr);
void zero_grad(const std::vector<Param*>& params);

// Process-wide count of sgd_step applications; the one-step-per-pipeline
// invariant is asserted against this.
uint64_t sgd_step_count();

// Central finite differences against the analytic gradients of
// `loss_builder` (which must be deterministic for fixed params). Returns the
// max over all parameter entries of |analytic - numeric| /
// max(|analytic|, |numeric|, 1e-8). Non-finite values throw, naming the
// parameter and flat index.
double grad_check(const std::function<Value(Graph&)>& loss_builder,
                  const std::vector<Param*>& params, double fd_step);

}  // namespace ssfa::ad
