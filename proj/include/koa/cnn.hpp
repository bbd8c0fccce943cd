#ifndef KOA_CNN_HPP
#define KOA_CNN_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "koa/rng.hpp"

namespace koa::cnn {

// Shape rules, fixed by the reference architecture's output-shape table:
// convolutions use same padding (out = ceil(in / stride), zero padding split
// front/back with the extra cell at the back); max pools use valid windows
// with floor division (out = floor((in - k) / stride) + 1).

struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

  double& at(int i, int j, int k, int l) {
    return v[((static_cast<std::size_t>(i) * c + j) * h + k) * w + l];
  }
  double at(int i, int j, int k, int l) const {
    return v[((static_cast<std::size_t>(i) * c + j) * h + k) * w + l];
  }
  std::size_t size() const { return v.size(); }
};

enum class LayerKind { conv, batchnorm, relu, maxpool, flatten, dense, dropout, softmax };

enum class Padding { same, valid };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  int kernels = 0;      // conv output channels / dense units
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  Padding padding = Padding::same;  // convs pad same; pools use valid windows
  double dropout_rate = 0.0;
  double l2_penalty = 0.0;
};

struct Shape {
  int c = 0, h = 0, w = 0;
  bool operator==(const Shape&) const = default;
};

struct NetworkSpec {
  int in_channels = 1;
  int in_h = 0;
  int in_w = 0;
  std::vector<LayerSpec> layers;
};

// Output shape after each layer, starting from the input spec.
std::vector<Shape> propagate_shapes(const NetworkSpec& spec);

// The reference stack: four conv(+bn+relu) stages with max pooling,
// dropout 0.25 in the last conv stage, a 1024-unit dense layer with
// dropout 0.5, and a softmax head over the five severity grades. L2
// penalty 0.01 on the last two convolutions and the first dense layer.
// Input is a 1x200x300 image.
NetworkSpec build_reference_network();

// Same layer kinds at desk scale for gradient checks and synthetic
// training; input 1 x in_h x in_w.
NetworkSpec build_desk_network(int in_h, int in_w);

struct ParamTensor {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;
  double l2_penalty = 0.0;
};

class Layer;

class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t init_seed);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const NetworkSpec& spec() const { return spec_; }

  // Train mode applies dropout masks and batch statistics; masks derive
  // from `dropout_seed`, so a fixed seed makes the pass a deterministic
  // function of the parameters. Eval mode ignores the seed.
  Tensor forward(const Tensor& x, bool train, std::uint64_t dropout_seed = 0);

  // Mean cross-entropy plus the L2 penalty terms.
  double loss_value(const Tensor& probs, const std::vector<int>& labels) const;

  // Forward + backward; fills every ParamTensor::grad. Returns the loss.
  double loss_and_gradients(const Tensor& x, const std::vector<int>& labels,
                            bool train, std::uint64_t dropout_seed = 0);

  std::vector<ParamTensor*> parameters();
  double penalty_value() const;

 private:
  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<ParamTensor*> params_;  // owned by layers_
};

struct AdamConfig {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
};

// One bias-corrected Adam update; t is 1-based.
void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, const AdamConfig& cfg, int t);

struct LabeledImages {
  Tensor images;            // N x C x H x W
  std::vector<int> labels;  // grade 0..4
};

// Class-separable synthetic images: a horizontal bar whose vertical band
// position encodes the class, plus seeded noise.
LabeledImages make_synthetic_images(int n, int h, int w, std::uint64_t seed);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::string to_csv() const;
};

// Minibatch Adam training. Deterministic per seed. Throws on divergence
// (non-finite loss). Per-epoch metrics are computed in eval mode.
TrainHistory train(Network& net, const LabeledImages& train_set,
                   const LabeledImages& val_set, int epochs, int batch_size,
                   const AdamConfig& cfg, std::uint64_t seed);

enum class GradeMode { expectation, argmax };

// Numeric grade per probability row: expectation scores sum_k k * p_k,
// argmax scores the modal class. Returns the RMSE against integer labels.
double rmse_from_probs(const Tensor& probs, const std::vector<int>& labels,
                       GradeMode mode);

double accuracy(const Tensor& probs, const std::vector<int>& labels);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central finite differences over every learned tensor against the
// backprop gradients. `step` is the FD half-step.
GradCheckResult gradient_check(Network& net, const Tensor& x,
                               const std::vector<int>& labels, double step = 1e-5);

const char* layer_kind_name(LayerKind k);

}  // namespace koa::cnn

#endif  // KOA_CNN_HPP
