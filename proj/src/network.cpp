#include "adt/network.hpp"

#include <cmath>
#include <string>

#include "adt/error.hpp"

namespace adt {

Network::Network(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("network: no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.rank() != 2 || l.bias.rank() != 1 || l.bias.size() != l.out_dim()) {
      throw InvalidArgument("network: layer " + std::to_string(i) + " has inconsistent weight/bias shapes");
    }
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
      throw InvalidArgument("network: layer " + std::to_string(i) + " input " + std::to_string(l.in_dim()) +
                            " does not chain with previous output " + std::to_string(layers_[i - 1].out_dim()));
    }
  }
}

Network Network::mlp(std::span<const std::size_t> dims, Activation hidden, Activation output, Rng& rng) {
  if (dims.size() < 2) throw InvalidArgument("network: need at least input and output dims");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const auto in = dims[i], out = dims[i + 1];
    const Real bound = std::sqrt(6.0 / static_cast<Real>(in + out));
    std::uniform_real_distribution<Real> u(-bound, bound);
    Tensor w({in, out});
    for (auto& v : w.data()) v = u(rng);
    layers.push_back({std::move(w), Tensor({out}), i + 2 == dims.size() ? output : hidden});
  }
  return Network(std::move(layers));
}

Network Network::zeros(std::span<const std::size_t> dims, Activation hidden, Activation output) {
  if (dims.size() < 2) throw InvalidArgument("network: need at least input and output dims");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    layers.push_back({Tensor({dims[i], dims[i + 1]}), Tensor({dims[i + 1]}),
                      i + 2 == dims.size() ? output : hidden});
  }
  return Network(std::move(layers));
}

std::size_t Network::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Network::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

bool operator==(const Network& a, const Network& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    if (x.activation != y.activation || !(x.weight == y.weight) || !(x.bias == y.bias)) return false;
  }
  return true;
}

std::vector<Var> bind_parameters(const Network& net, Tape& tape, ParamMode mode) {
  std::vector<Var> out;
  for (const auto* p : net.parameters()) {
    out.push_back(mode == ParamMode::leaves ? tape.leaf(*p) : tape.constant(*p));
  }
  return out;
}

Var apply(const Network& net, std::span<const Var> params, Var x, std::size_t layers) {
  const auto& ls = net.layers();
  if (params.size() != 2 * ls.size()) throw InvalidArgument("network: parameter list does not match layers");
  if (x.value().rank() != 2 || x.value().cols() != net.input_dim()) {
    throw InvalidArgument("network: input shape " + shape_string(x.shape()) + " does not match input dim " +
                          std::to_string(net.input_dim()));
  }
  const std::size_t n = layers == 0 ? ls.size() : std::min(layers, ls.size());
  Var h = x;
  for (std::size_t i = 0; i < n; ++i) {
    h = activate(add(matmul(h, params[2 * i]), params[2 * i + 1]), ls[i].activation);
  }
  return h;
}

ForwardPass forward(const Network& net, Var x, ParamMode mode) {
  Tape& tape = x.tape();
  ForwardPass fp;
  fp.params = bind_parameters(net, tape, mode);
  if (x.value().rank() == 1) {
    const auto d = x.value().size();
    Var row = tape.record("reshape", x.value().reshaped({1, d}), {x},
                          [](const Tensor& g, std::vector<Tensor>& gi) { gi[0] = g.reshaped(gi[0].shape()); });
    Var out = apply(net, fp.params, row);
    const auto c = out.value().size();
    fp.output = tape.record("reshape", out.value().reshaped({c}), {out},
                            [](const Tensor& g, std::vector<Tensor>& gi) { gi[0] = g.reshaped(gi[0].shape()); });
  } else {
    fp.output = apply(net, fp.params, x);
  }
  return fp;
}

Tensor infer(const Network& net, const Tensor& x, std::size_t layers) {
  const bool vec = x.rank() == 1;
  const Tensor in = vec ? x.reshaped({1, x.size()}) : x;
  if (in.rank() != 2 || in.cols() != net.input_dim()) {
    throw InvalidArgument("network: input shape " + shape_string(x.shape()) + " does not match input dim " +
                          std::to_string(net.input_dim()));
  }
  const auto& ls = net.layers();
  const std::size_t n = layers == 0 ? ls.size() : std::min(layers, ls.size());
  Tensor h = in;
  for (std::size_t li = 0; li < n; ++li) {
    const auto& l = ls[li];
    const auto m = h.rows(), k = l.in_dim(), o = l.out_dim();
    Tensor out({m, o});
    for (std::size_t i = 0; i < m; ++i) {
      Real* orow = &out.storage()[i * o];
      for (std::size_t j = 0; j < o; ++j) orow[j] = l.bias[j];
      for (std::size_t p = 0; p < k; ++p) {
        const Real xv = h[i * k + p];
        if (xv == 0.0) continue;
        const Real* wrow = &l.weight.storage()[p * o];
        for (std::size_t j = 0; j < o; ++j) orow[j] += xv * wrow[j];
      }
      for (std::size_t j = 0; j < o; ++j) {
        Real& v = orow[j];
        if (l.activation == Activation::relu) v = v > 0 ? v : 0.0;
        else if (l.activation == Activation::tanh) v = std::tanh(v);
      }
    }
    h = std::move(out);
  }
  if (!h.all_finite()) throw NumericError("network: non-finite activation during inference");
  return vec ? h.reshaped({h.size()}) : h;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const auto m = logits.rows(), c = logits.cols();
  std::vector<int> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t b = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (logits[i * c + j] > logits[i * c + b]) b = j;
    }
    out[i] = static_cast<int>(b);
  }
  return out;
}

std::vector<int> predict(const Network& net, const Tensor& x) { return argmax_rows(infer(net, x)); }

}  // namespace adt
