#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "causerec/dense.hpp"

namespace causerec {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Dense2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode tape over matrix-valued nodes. Every op records its output and
// a closure that pushes the output gradient to its inputs. backward() replays
// the closures in exact reverse order of recording.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that reads `value` in place and accumulates its gradient into `*grad`.
  // Both must outlive the tape; `grad` must have the shape of `value`.
  Var param(const Dense2& value, Dense2* grad);
  // Leaf without gradient.
  Var constant(Dense2 value);
  // Leaf without gradient that reads `value` in place; `value` must outlive the tape.
  Var view(const Dense2& value);
  // Owned leaf whose gradient is kept on the tape (read it back with grad()).
  Var input(Dense2 value);

  // Records an op output. `inputs` decides whether the node needs a gradient.
  Var record(const char* op, Dense2 value, std::span<const Var> inputs, BackwardFn backward);

  const Dense2& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient buffer for node `id`, zero-initialized on first touch.
  Dense2& grad_buffer(std::size_t id);
  // Gradient of an `input` or `param` leaf after backward(); zeros if untouched.
  Dense2 grad(Var v) const;

  // Seeds d(out)/d(out) = 1 for a 1x1 output and replays the tape.
  void backward(Var out);
  void backward(Var out, const Dense2& seed);

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
  // Node ids in the order the last backward() visited them.
  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

 private:
  struct Node {
    std::string op;
    Dense2 owned;
    const Dense2* external = nullptr;
    Dense2* external_grad = nullptr;
    Dense2 grad;
    bool grad_touched = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

// ---------------------------------------------------------------------------
// Ops. Shapes are (rows x cols); vectors travel as 1 x n rows.
// ---------------------------------------------------------------------------

// y = x W^T + b for each row of x; x: n x in, W: out x in, b: 1 x out.
Var affine(Var x, Var w, Var b);
// y = x W^T.
Var linear(Var x, Var w);
Var relu(Var x);
Var tanh_map(Var x);
// Softmax along each row, with max subtraction.
Var softmax_rows(Var x);
// Each row scaled to unit Euclidean norm. Throws DegenerateVectorError when a
// row has norm below 1e-12.
Var l2_normalize_rows(Var x);

Var add(Var a, Var b);
Var scale(Var x, double c);
// a * x + b elementwise.
Var affine_scalar(Var x, double a, double b);
// max(0, x - margin) elementwise; zero subgradient at the kink.
Var hinge(Var x, double margin);
// n x 1 column of row sums.
Var row_sum(Var x);
Var sum_all(Var x);
Var mean_all(Var x);

// Row i of the output is row ids[i] of `table`; gradient scatter-adds back.
Var gather_rows(Var table, std::span<const std::size_t> ids);
Var concat_rows(Var a, Var b);
// Copy of `x` with the listed rows overwritten by the rows of `replacement`
// (no gradient flows to overwritten rows or to the replacement values).
Var replace_rows(Var x, std::span<const std::size_t> rows, const Dense2& replacement);

// Segments are contiguous row ranges [offsets[s], offsets[s+1]).
// Mean of each segment's rows; output is nseg x cols.
Var segment_mean(Var x, std::span<const std::size_t> offsets);
// Softmax over the rows of each segment, independently per column.
Var segment_softmax_cols(Var s, std::span<const std::size_t> offsets);
// For segment s with weights a_s (t x K) and rows x_s (t x d), emits a_s^T x_s
// as K consecutive output rows.
Var segment_attend(Var a, Var x, std::span<const std::size_t> offsets);

// u: B x d, e: (B*g) x d. out[b][j] = <u_b, e_{b*g+j}>.
Var grouped_dot(Var u, Var e, std::size_t group);
// Same layout as grouped_dot with Euclidean distance; zero gradient at distance 0.
Var grouped_distance(Var u, Var e, std::size_t group);
// -log softmax(row)[0] per row; n x 1.
Var xent_first_col(Var logits);
// Per row b: sum_{m,n} max(dpos[b][m] - dneg[b][n] + margin, 0); n x 1.
Var triplet_hinge(Var dpos, Var dneg, double margin);

}  // namespace causerec
