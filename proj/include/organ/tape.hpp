#pragma once

// Reverse-mode differentiation over the small layer set the two networks use.
// Activations are batched row-major matrices [rows, cols]; parameters are
// referenced directly and receive gradients in Parameter::grad.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "organ/params.hpp"
#include "organ/tensor.hpp"

namespace organ::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

enum class Activation { Identity, Relu, Tanh };

/// LSTM parameters; gate blocks in the order input, forget, output, candidate.
struct LstmWeights {
  Parameter& input;      // [4H, I]
  Parameter& recurrent;  // [4H, H]
  Parameter& bias;       // [4H]
};

struct LstmState {
  Var hidden;
  Var cell;
};

class Tape {
 public:
  Tape();

  /// Constant input; no gradient flows out of it.
  Var constant(Tensor value);
  /// Leaf whose gradient is added to p.grad.
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target with respect to v (zeros if unreached).
  Tensor grad(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  /// Rows of `table` selected by ids -> [ids.size(), E].
  Var embedding(Parameter& table, std::span<const int> ids);
  /// x [R, I] times w^T [I, O] plus optional bias [O].
  Var affine(Var x, Parameter& w, Parameter* bias);
  LstmState lstm_step(Var x, LstmState state, const LstmWeights& w);
  /// x is [B, T*E] holding T embeddings of width E per row. Valid convolution
  /// with each filter row ([F, width*E]) plus bias, maximum over time, then the
  /// activation (monotone, so equal to activating before the maximum).
  Var conv_maxpool(Var x, std::size_t seq_len, Parameter& filters, Parameter& bias, std::size_t width,
                   Activation act);

  Var concat_cols(std::span<const Var> parts);
  Var stack_rows(std::span<const Var> parts);
  Var slice_rows(Var x, std::size_t first, std::size_t count);
  Var reshape(Var x, Shape shape);

  Var sigmoid(Var x);
  Var tanh(Var x);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  /// Elementwise product with a fixed mask (dropout).
  Var mask(Var x, const Tensor& mask);

  /// Scalar sum_r weight[r] * -log softmax(logits[r])[target[r]].
  Var softmax_xent(Var logits, std::span<const int> targets, std::span<const double> weights);
  /// Scalar sum_r weight[r] * BCE(sigmoid(logit[r]), label[r]); logits is [R, 1].
  Var bce_logits(Var logits, std::span<const double> labels, std::span<const double> weights);
  /// Scalar sum_r weight[r] * x[r]; x is [R, 1].
  Var weighted_sum(Var x, std::span<const double> weights);
  Var sum(Var x);
  /// Scalar coefficient * sum of squares over the given parameters.
  Var l2_penalty(std::span<Parameter* const> params, double coefficient);

  /// Back-propagates d(loss)/d(.) from a scalar node.
  void backward(Var loss);
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool constant = false;
    std::function<void()> back;
  };

  Var push(Tensor value, bool constant = false);
  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor& grad_of(Var v);

  std::vector<Node> nodes_;
};

/// Numerically stable softmax written into out.
void softmax(std::span<const double> logits, std::span<double> out);
std::vector<double> softmax(std::span<const double> logits);

}  // namespace organ::nn
