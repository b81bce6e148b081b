#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adt/ops.hpp"
#include "adt/rng.hpp"

namespace adt {

struct DenseLayer {
  Tensor weight;  // (in x out)
  Tensor bias;    // (out)
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

/// Stack of dense layers: the classifier, the generators and the variational
/// posterior are all instances of this.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<DenseLayer> layers);

  /// Xavier-uniform weights, zero biases. `dims` = {in, hidden..., out}.
  static Network mlp(std::span<const std::size_t> dims, Activation hidden, Activation output, Rng& rng);
  static Network zeros(std::span<const std::size_t> dims, Activation hidden, Activation output);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t depth() const { return layers_.size(); }
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  // Flattened parameter list in (weight, bias) order per layer.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  friend bool operator==(const Network&, const Network&);

 private:
  std::vector<DenseLayer> layers_;
};

/// Records a forward pass on a tape.
struct ForwardPass {
  Var output;
  // Parameter nodes in Network::parameters() order.
  std::vector<Var> params;
};

enum class ParamMode { leaves, constants };

// Puts the network parameters on the tape.
std::vector<Var> bind_parameters(const Network& net, Tape& tape, ParamMode mode);

// Runs the first `layers` layers (all when layers == 0) on a (rows x in) input.
Var apply(const Network& net, std::span<const Var> params, Var x, std::size_t layers = 0);

/// Forward pass with parameters recorded as leaves. A rank-1 input is treated
/// as a single row and the output is returned as rank 1.
ForwardPass forward(const Network& net, Var x, ParamMode mode = ParamMode::leaves);

/// Tape-free inference on a (rows x in) matrix or a rank-1 vector.
Tensor infer(const Network& net, const Tensor& x, std::size_t layers = 0);

// Argmax per row; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> predict(const Network& net, const Tensor& x);

}  // namespace adt
