#include "koa/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "koa/csv.hpp"

namespace koa::cnn {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
constexpr double kProbFloor = 1e-12;

int conv_out(int in, int stride) { return (in + stride - 1) / stride; }
int pool_out(int in, int k, int stride) { return (in - k) / stride + 1; }

}  // namespace

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

std::vector<Shape> propagate_shapes(const NetworkSpec& spec) {
  std::vector<Shape> shapes;
  Shape s{spec.in_channels, spec.in_h, spec.in_w};
  for (const auto& layer : spec.layers) {
    if (layer.stride < 1) {
      throw std::invalid_argument("network: stride must be >= 1 at " + layer.name);
    }
    if (layer.dropout_rate < 0.0 || layer.dropout_rate >= 1.0) {
      throw std::invalid_argument("network: dropout rate must lie in [0,1) at " + layer.name);
    }
    if (layer.l2_penalty < 0.0) {
      throw std::invalid_argument("network: negative L2 penalty at " + layer.name);
    }
    if (layer.kind == LayerKind::conv && layer.padding != Padding::same) {
      throw std::invalid_argument("network: convolutions support same padding only (" +
                                  layer.name + ")");
    }
    if (layer.kind == LayerKind::maxpool && layer.padding != Padding::valid) {
      throw std::invalid_argument("network: pools support valid padding only (" +
                                  layer.name + ")");
    }
    switch (layer.kind) {
      case LayerKind::conv:
        s = Shape{layer.kernels, conv_out(s.h, layer.stride), conv_out(s.w, layer.stride)};
        break;
      case LayerKind::maxpool:
        if (s.h < layer.kernel_h || s.w < layer.kernel_w) {
          throw std::invalid_argument("network: pool window larger than input at " + layer.name);
        }
        s = Shape{s.c, pool_out(s.h, layer.kernel_h, layer.stride),
                  pool_out(s.w, layer.kernel_w, layer.stride)};
        break;
      case LayerKind::flatten:
        s = Shape{s.c * s.h * s.w, 1, 1};
        break;
      case LayerKind::dense:
        if (s.h != 1 || s.w != 1) {
          throw std::invalid_argument("network: dense layer needs flattened input at " + layer.name);
        }
        s = Shape{layer.kernels, 1, 1};
        break;
      case LayerKind::batchnorm:
      case LayerKind::relu:
      case LayerKind::dropout:
      case LayerKind::softmax:
        break;
    }
    shapes.push_back(s);
  }
  return shapes;
}

NetworkSpec build_reference_network() {
  NetworkSpec spec;
  spec.in_channels = 1;
  spec.in_h = 200;
  spec.in_w = 300;
  auto conv = [](const std::string& name, int kernels, int k, int stride, double l2) {
    LayerSpec l;
    l.kind = LayerKind::conv;
    l.name = name;
    l.kernels = kernels;
    l.kernel_h = l.kernel_w = k;
    l.stride = stride;
    l.l2_penalty = l2;
    return l;
  };
  auto pool = [](const std::string& name) {
    LayerSpec l;
    l.kind = LayerKind::maxpool;
    l.name = name;
    l.kernel_h = l.kernel_w = 3;
    l.stride = 2;
    l.padding = Padding::valid;
    return l;
  };
  auto plain = [](LayerKind kind, const std::string& name) {
    LayerSpec l;
    l.kind = kind;
    l.name = name;
    return l;
  };
  auto dropout = [](const std::string& name, double rate) {
    LayerSpec l;
    l.kind = LayerKind::dropout;
    l.name = name;
    l.dropout_rate = rate;
    return l;
  };
  auto dense = [](const std::string& name, int units, double l2) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.name = name;
    l.kernels = units;
    l.l2_penalty = l2;
    return l;
  };

  spec.layers = {
      conv("conv1", 32, 11, 2, 0.0),
      plain(LayerKind::batchnorm, "bn1"),
      plain(LayerKind::relu, "relu1"),
      pool("maxPool1"),
      conv("conv2", 64, 5, 1, 0.0),
      plain(LayerKind::batchnorm, "bn2"),
      plain(LayerKind::relu, "relu2"),
      pool("maxPool2"),
      conv("conv3", 96, 3, 1, 0.01),
      plain(LayerKind::batchnorm, "bn3"),
      plain(LayerKind::relu, "relu3"),
      pool("maxPool3"),
      conv("conv4", 128, 3, 1, 0.01),
      plain(LayerKind::batchnorm, "bn4"),
      plain(LayerKind::relu, "relu4"),
      dropout("drop4", 0.25),
      pool("maxPool4"),
      plain(LayerKind::flatten, "flatten"),
      dense("fc5", 1024, 0.01),
      plain(LayerKind::relu, "relu5"),
      dropout("drop5", 0.5),
      dense("fc6", 5, 0.0),
      plain(LayerKind::softmax, "softmax"),
  };
  // maxPool2, maxPool3 names keep the stage numbering readable in reports.
  return spec;
}

NetworkSpec build_desk_network(int in_h, int in_w) {
  NetworkSpec ref = build_reference_network();
  NetworkSpec spec;
  spec.in_channels = 1;
  spec.in_h = in_h;
  spec.in_w = in_w;

  auto grab = [&](const std::string& name) {
    for (const auto& l : ref.layers) {
      if (l.name == name) return l;
    }
    throw std::logic_error("desk network: missing template layer " + name);
  };

  LayerSpec conv1 = grab("conv1");
  conv1.kernels = 4;
  conv1.kernel_h = conv1.kernel_w = 5;
  LayerSpec conv2 = grab("conv4");  // keeps the 0.01 penalty
  conv2.name = "conv2";
  conv2.kernels = 8;
  LayerSpec fc1 = grab("fc5");
  fc1.name = "fc1";
  fc1.kernels = 32;
  LayerSpec fc2 = grab("fc6");
  fc2.name = "fc2";

  LayerSpec pool1 = grab("maxPool1");
  LayerSpec pool2 = grab("maxPool4");
  pool2.name = "maxPool2";
  LayerSpec bn1 = grab("bn1");
  LayerSpec bn2 = grab("bn2");
  LayerSpec drop1 = grab("drop4");  // 0.25 after the last conv stage
  drop1.name = "drop1";
  LayerSpec drop2 = grab("drop5");  // 0.5 after the first dense layer
  drop2.name = "drop2";

  auto plain = [](LayerKind kind, const std::string& name) {
    LayerSpec l;
    l.kind = kind;
    l.name = name;
    return l;
  };

  spec.layers = {
      conv1,
      bn1,
      plain(LayerKind::relu, "relu1"),
      pool1,
      conv2,
      bn2,
      plain(LayerKind::relu, "relu2"),
      drop1,
      pool2,
      plain(LayerKind::flatten, "flatten"),
      fc1,
      plain(LayerKind::relu, "relu3"),
      drop2,
      fc2,
      plain(LayerKind::softmax, "softmax"),
  };
  return spec;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(std::move(spec)) {}
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train, Rng& rng) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<ParamTensor*> params() { return {}; }
  const LayerSpec& spec() const { return spec_; }

 protected:
  LayerSpec spec_;
};

class ConvLayer : public Layer {
 public:
  ConvLayer(LayerSpec spec, int in_c, Rng& init)
      : Layer(std::move(spec)), in_c_(in_c) {
    const int fan_in = in_c * spec_.kernel_h * spec_.kernel_w;
    const double bound = std::sqrt(3.0 / fan_in);
    weights_.name = spec_.name + ".W";
    weights_.l2_penalty = spec_.l2_penalty;
    weights_.value.resize(static_cast<std::size_t>(spec_.kernels) * in_c *
                          spec_.kernel_h * spec_.kernel_w);
    for (auto& w : weights_.value) w = init.uniform(-bound, bound);
    weights_.grad.assign(weights_.value.size(), 0.0);
    bias_.name = spec_.name + ".b";
    bias_.value.assign(static_cast<std::size_t>(spec_.kernels), 0.0);
    bias_.grad.assign(bias_.value.size(), 0.0);
  }

  Tensor forward(const Tensor& x, bool, Rng&) override {
    x_ = x;
    const int out_h = conv_out(x.h, spec_.stride);
    const int out_w = conv_out(x.w, spec_.stride);
    pad_top_ = std::max((out_h - 1) * spec_.stride + spec_.kernel_h - x.h, 0) / 2;
    pad_left_ = std::max((out_w - 1) * spec_.stride + spec_.kernel_w - x.w, 0) / 2;

    Tensor y(x.n, spec_.kernels, out_h, out_w);
    for (int i = 0; i < x.n; ++i) {
      for (int oc = 0; oc < spec_.kernels; ++oc) {
        for (int oh = 0; oh < out_h; ++oh) {
          for (int ow = 0; ow < out_w; ++ow) {
            double acc = bias_.value[static_cast<std::size_t>(oc)];
            for (int ic = 0; ic < in_c_; ++ic) {
              for (int kh = 0; kh < spec_.kernel_h; ++kh) {
                const int ih = oh * spec_.stride + kh - pad_top_;
                if (ih < 0 || ih >= x.h) continue;
                for (int kw = 0; kw < spec_.kernel_w; ++kw) {
                  const int iw = ow * spec_.stride + kw - pad_left_;
                  if (iw < 0 || iw >= x.w) continue;
                  acc += weight(oc, ic, kh, kw) * x.at(i, ic, ih, iw);
                }
              }
            }
            y.at(i, oc, oh, ow) = acc;
          }
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(x_.n, x_.c, x_.h, x_.w);
    for (int i = 0; i < dy.n; ++i) {
      for (int oc = 0; oc < spec_.kernels; ++oc) {
        for (int oh = 0; oh < dy.h; ++oh) {
          for (int ow = 0; ow < dy.w; ++ow) {
            const double g = dy.at(i, oc, oh, ow);
            if (g == 0.0) continue;
            bias_.grad[static_cast<std::size_t>(oc)] += g;
            for (int ic = 0; ic < in_c_; ++ic) {
              for (int kh = 0; kh < spec_.kernel_h; ++kh) {
                const int ih = oh * spec_.stride + kh - pad_top_;
                if (ih < 0 || ih >= x_.h) continue;
                for (int kw = 0; kw < spec_.kernel_w; ++kw) {
                  const int iw = ow * spec_.stride + kw - pad_left_;
                  if (iw < 0 || iw >= x_.w) continue;
                  wgrad(oc, ic, kh, kw) += g * x_.at(i, ic, ih, iw);
                  dx.at(i, ic, ih, iw) += g * weight(oc, ic, kh, kw);
                }
              }
            }
          }
        }
      }
    }
    return dx;
  }

  std::vector<ParamTensor*> params() override { return {&weights_, &bias_}; }

 private:
  double& weight(int oc, int ic, int kh, int kw) {
    return weights_.value[((static_cast<std::size_t>(oc) * in_c_ + ic) * spec_.kernel_h + kh) *
                              spec_.kernel_w + kw];
  }
  double& wgrad(int oc, int ic, int kh, int kw) {
    return weights_.grad[((static_cast<std::size_t>(oc) * in_c_ + ic) * spec_.kernel_h + kh) *
                             spec_.kernel_w + kw];
  }

  int in_c_;
  int pad_top_ = 0, pad_left_ = 0;
  ParamTensor weights_, bias_;
  Tensor x_;
};

class BatchNormLayer : public Layer {
 public:
  BatchNormLayer(LayerSpec spec, int channels) : Layer(std::move(spec)), c_(channels) {
    gamma_.name = spec_.name + ".gamma";
    gamma_.value.assign(static_cast<std::size_t>(c_), 1.0);
    gamma_.grad.assign(static_cast<std::size_t>(c_), 0.0);
    beta_.name = spec_.name + ".beta";
    beta_.value.assign(static_cast<std::size_t>(c_), 0.0);
    beta_.grad.assign(static_cast<std::size_t>(c_), 0.0);
    running_mean_.assign(static_cast<std::size_t>(c_), 0.0);
    running_var_.assign(static_cast<std::size_t>(c_), 1.0);
  }

  Tensor forward(const Tensor& x, bool train, Rng&) override {
    const int spatial = x.h * x.w;
    const std::size_t m = static_cast<std::size_t>(x.n) * spatial;
    Tensor y(x.n, x.c, x.h, x.w);
    xhat_ = Tensor(x.n, x.c, x.h, x.w);
    inv_std_.assign(static_cast<std::size_t>(c_), 0.0);
    m_ = static_cast<double>(m);

    for (int ch = 0; ch < c_; ++ch) {
      double mean, var;
      if (train) {
        double sum = 0.0;
        for (int i = 0; i < x.n; ++i)
          for (int k = 0; k < x.h; ++k)
            for (int l = 0; l < x.w; ++l) sum += x.at(i, ch, k, l);
        mean = sum / m_;
        double ss = 0.0;
        for (int i = 0; i < x.n; ++i)
          for (int k = 0; k < x.h; ++k)
            for (int l = 0; l < x.w; ++l) {
              const double d = x.at(i, ch, k, l) - mean;
              ss += d * d;
            }
        var = ss / m_;
        running_mean_[ch] = (1.0 - kBnMomentum) * running_mean_[ch] + kBnMomentum * mean;
        running_var_[ch] = (1.0 - kBnMomentum) * running_var_[ch] + kBnMomentum * var;
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      const double inv = 1.0 / std::sqrt(var + kBnEps);
      inv_std_[ch] = inv;
      const double g = gamma_.value[ch];
      const double b = beta_.value[ch];
      for (int i = 0; i < x.n; ++i) {
        for (int k = 0; k < x.h; ++k) {
          for (int l = 0; l < x.w; ++l) {
            const double normed = (x.at(i, ch, k, l) - mean) * inv;
            xhat_.at(i, ch, k, l) = normed;
            y.at(i, ch, k, l) = g * normed + b;
          }
        }
      }
    }
    train_mode_ = train;
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    for (int ch = 0; ch < c_; ++ch) {
      const double g = gamma_.value[ch];
      const double inv = inv_std_[ch];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < dy.n; ++i) {
        for (int k = 0; k < dy.h; ++k) {
          for (int l = 0; l < dy.w; ++l) {
            const double d = dy.at(i, ch, k, l);
            sum_dy += d;
            sum_dy_xhat += d * xhat_.at(i, ch, k, l);
          }
        }
      }
      gamma_.grad[ch] += sum_dy_xhat;
      beta_.grad[ch] += sum_dy;

      if (train_mode_) {
        for (int i = 0; i < dy.n; ++i) {
          for (int k = 0; k < dy.h; ++k) {
            for (int l = 0; l < dy.w; ++l) {
              const double d = dy.at(i, ch, k, l);
              dx.at(i, ch, k, l) = g * inv / m_ *
                  (m_ * d - sum_dy - xhat_.at(i, ch, k, l) * sum_dy_xhat);
            }
          }
        }
      } else {
        for (int i = 0; i < dy.n; ++i)
          for (int k = 0; k < dy.h; ++k)
            for (int l = 0; l < dy.w; ++l) dx.at(i, ch, k, l) = dy.at(i, ch, k, l) * g * inv;
      }
    }
    return dx;
  }

  std::vector<ParamTensor*> params() override { return {&gamma_, &beta_}; }

 private:
  int c_;
  double m_ = 1.0;
  bool train_mode_ = false;
  ParamTensor gamma_, beta_;
  std::vector<double> running_mean_, running_var_, inv_std_;
  Tensor xhat_;
};

class ReluLayer : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, bool, Rng&) override {
    mask_.assign(x.size(), false);
    Tensor y = x;
    for (std::size_t i = 0; i < y.v.size(); ++i) {
      if (y.v[i] > 0.0) mask_[i] = true;
      else y.v[i] = 0.0;
    }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) {
      if (!mask_[i]) dx.v[i] = 0.0;
    }
    return dx;
  }

 private:
  std::vector<bool> mask_;
};

class MaxPoolLayer : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, bool, Rng&) override {
    in_shape_ = {x.c, x.h, x.w};
    n_ = x.n;
    const int out_h = pool_out(x.h, spec_.kernel_h, spec_.stride);
    const int out_w = pool_out(x.w, spec_.kernel_w, spec_.stride);
    Tensor y(x.n, x.c, out_h, out_w);
    argmax_.assign(y.size(), 0);
    std::size_t idx = 0;
    for (int i = 0; i < x.n; ++i) {
      for (int ch = 0; ch < x.c; ++ch) {
        for (int oh = 0; oh < out_h; ++oh) {
          for (int ow = 0; ow < out_w; ++ow, ++idx) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_src = 0;
            for (int kh = 0; kh < spec_.kernel_h; ++kh) {
              for (int kw = 0; kw < spec_.kernel_w; ++kw) {
                const int ih = oh * spec_.stride + kh;
                const int iw = ow * spec_.stride + kw;
                const double v = x.at(i, ch, ih, iw);
                if (v > best) {  // ties keep the first window cell
                  best = v;
                  best_src = ((static_cast<std::size_t>(i) * x.c + ch) * x.h + ih) * x.w + iw;
                }
              }
            }
            y.at(i, ch, oh, ow) = best;
            argmax_[idx] = best_src;
          }
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(n_, in_shape_.c, in_shape_.h, in_shape_.w);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[argmax_[i]] += dy.v[i];
    return dx;
  }

 private:
  Shape in_shape_;
  int n_ = 0;
  std::vector<std::size_t> argmax_;
};

class FlattenLayer : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, bool, Rng&) override {
    in_shape_ = {x.c, x.h, x.w};
    Tensor y(x.n, x.c * x.h * x.w, 1, 1);
    y.v = x.v;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx(dy.n, in_shape_.c, in_shape_.h, in_shape_.w);
    dx.v = dy.v;
    return dx;
  }

 private:
  Shape in_shape_;
};

class DenseLayer : public Layer {
 public:
  DenseLayer(LayerSpec spec, int in_features, Rng& init)
      : Layer(std::move(spec)), in_(in_features) {
    const double bound = std::sqrt(3.0 / in_);
    weights_.name = spec_.name + ".W";
    weights_.l2_penalty = spec_.l2_penalty;
    weights_.value.resize(static_cast<std::size_t>(spec_.kernels) * in_);
    for (auto& w : weights_.value) w = init.uniform(-bound, bound);
    weights_.grad.assign(weights_.value.size(), 0.0);
    bias_.name = spec_.name + ".b";
    bias_.value.assign(static_cast<std::size_t>(spec_.kernels), 0.0);
    bias_.grad.assign(bias_.value.size(), 0.0);
  }

  Tensor forward(const Tensor& x, bool, Rng&) override {
    x_ = x;
    Tensor y(x.n, spec_.kernels, 1, 1);
    for (int i = 0; i < x.n; ++i) {
      for (int o = 0; o < spec_.kernels; ++o) {
        double acc = bias_.value[static_cast<std::size_t>(o)];
        const std::size_t base = static_cast<std::size_t>(o) * in_;
        for (int f = 0; f < in_; ++f) {
          acc += weights_.value[base + f] * x.at(i, f, 0, 0);
        }
        y.at(i, o, 0, 0) = acc;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dx(x_.n, in_, 1, 1);
    for (int i = 0; i < dy.n; ++i) {
      for (int o = 0; o < spec_.kernels; ++o) {
        const double g = dy.at(i, o, 0, 0);
        if (g == 0.0) continue;
        bias_.grad[static_cast<std::size_t>(o)] += g;
        const std::size_t base = static_cast<std::size_t>(o) * in_;
        for (int f = 0; f < in_; ++f) {
          weights_.grad[base + f] += g * x_.at(i, f, 0, 0);
          dx.at(i, f, 0, 0) += g * weights_.value[base + f];
        }
      }
    }
    return dx;
  }

  std::vector<ParamTensor*> params() override { return {&weights_, &bias_}; }

 private:
  int in_;
  ParamTensor weights_, bias_;
  Tensor x_;
};

class DropoutLayer : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, bool train, Rng& rng) override {
    Tensor y = x;
    if (!train || spec_.dropout_rate <= 0.0) {
      scaled_mask_.assign(x.size(), 1.0);
      return y;
    }
    // Inverted dropout: surviving activations scale by 1/keep, so the
    // expected value matches eval mode.
    const double keep = 1.0 - spec_.dropout_rate;
    const double scale = 1.0 / keep;
    scaled_mask_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      scaled_mask_[i] = rng.uniform() < keep ? scale : 0.0;
      y.v[i] *= scaled_mask_[i];
    }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= scaled_mask_[i];
    return dx;
  }

 private:
  std::vector<double> scaled_mask_;
};

class SoftmaxLayer : public Layer {
 public:
  using Layer::Layer;
  Tensor forward(const Tensor& x, bool, Rng&) override {
    Tensor y = x;
    for (int i = 0; i < x.n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < x.c; ++k) mx = std::max(mx, x.at(i, k, 0, 0));
      double total = 0.0;
      for (int k = 0; k < x.c; ++k) {
        const double e = std::exp(x.at(i, k, 0, 0) - mx);
        y.at(i, k, 0, 0) = e;
        total += e;
      }
      for (int k = 0; k < x.c; ++k) y.at(i, k, 0, 0) /= total;
    }
    probs_ = y;
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    // Full softmax Jacobian: dz_k = p_k (dy_k - sum_j dy_j p_j).
    Tensor dx = dy;
    for (int i = 0; i < dy.n; ++i) {
      double dot = 0.0;
      for (int k = 0; k < dy.c; ++k) dot += dy.at(i, k, 0, 0) * probs_.at(i, k, 0, 0);
      for (int k = 0; k < dy.c; ++k) {
        dx.at(i, k, 0, 0) = probs_.at(i, k, 0, 0) * (dy.at(i, k, 0, 0) - dot);
      }
    }
    return dx;
  }

 private:
  Tensor probs_;
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

Network::Network(NetworkSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  propagate_shapes(spec_);  // validates shape consistency up front
  Rng init(init_seed);
  Shape s{spec_.in_channels, spec_.in_h, spec_.in_w};
  for (const auto& layer : spec_.layers) {
    switch (layer.kind) {
      case LayerKind::conv:
        layers_.push_back(std::make_unique<ConvLayer>(layer, s.c, init));
        s = Shape{layer.kernels, conv_out(s.h, layer.stride), conv_out(s.w, layer.stride)};
        break;
      case LayerKind::batchnorm:
        layers_.push_back(std::make_unique<BatchNormLayer>(layer, s.c));
        break;
      case LayerKind::relu:
        layers_.push_back(std::make_unique<ReluLayer>(layer));
        break;
      case LayerKind::maxpool:
        layers_.push_back(std::make_unique<MaxPoolLayer>(layer));
        s = Shape{s.c, pool_out(s.h, layer.kernel_h, layer.stride),
                  pool_out(s.w, layer.kernel_w, layer.stride)};
        break;
      case LayerKind::flatten:
        layers_.push_back(std::make_unique<FlattenLayer>(layer));
        s = Shape{s.c * s.h * s.w, 1, 1};
        break;
      case LayerKind::dense:
        layers_.push_back(std::make_unique<DenseLayer>(layer, s.c, init));
        s = Shape{layer.kernels, 1, 1};
        break;
      case LayerKind::dropout:
        layers_.push_back(std::make_unique<DropoutLayer>(layer));
        break;
      case LayerKind::softmax:
        layers_.push_back(std::make_unique<SoftmaxLayer>(layer));
        break;
    }
  }
  for (auto& layer : layers_) {
    for (ParamTensor* p : layer->params()) params_.push_back(p);
  }
}

Tensor Network::forward(const Tensor& x, bool train, std::uint64_t dropout_seed) {
  if (x.c != spec_.in_channels || x.h != spec_.in_h || x.w != spec_.in_w) {
    throw std::invalid_argument("network: input shape mismatch");
  }
  Rng rng(dropout_seed);
  Tensor cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, train, rng);
  return cur;
}

double Network::penalty_value() const {
  double acc = 0.0;
  for (const ParamTensor* p : params_) {
    if (p->l2_penalty > 0.0) {
      double ss = 0.0;
      for (double w : p->value) ss += w * w;
      acc += p->l2_penalty * ss;
    }
  }
  return acc;
}

double Network::loss_value(const Tensor& probs, const std::vector<int>& labels) const {
  if (static_cast<std::size_t>(probs.n) != labels.size()) {
    throw std::invalid_argument("loss: label count mismatch");
  }
  double ce = 0.0;
  for (int i = 0; i < probs.n; ++i) {
    const double p = std::max(probs.at(i, labels[static_cast<std::size_t>(i)], 0, 0), kProbFloor);
    ce -= std::log(p);
  }
  return ce / probs.n + penalty_value();
}

double Network::loss_and_gradients(const Tensor& x, const std::vector<int>& labels,
                                   bool train, std::uint64_t dropout_seed) {
  for (ParamTensor* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0);

  const Tensor probs = forward(x, train, dropout_seed);
  const double loss = loss_value(probs, labels);

  // d(mean CE)/d p_k = -1{k == label} / (N p_k)
  Tensor dprobs(probs.n, probs.c, 1, 1);
  for (int i = 0; i < probs.n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    const double p = std::max(probs.at(i, label, 0, 0), kProbFloor);
    dprobs.at(i, label, 0, 0) = -1.0 / (p * probs.n);
  }

  Tensor grad = dprobs;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    grad = (*it)->backward(grad);
  }

  // L2 penalty gradients: d/dw (lambda * ||W||^2) = 2 lambda w.
  for (ParamTensor* p : parameters()) {
    if (p->l2_penalty > 0.0) {
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        p->grad[i] += 2.0 * p->l2_penalty * p->value[i];
      }
    }
  }
  return loss;
}

std::vector<ParamTensor*> Network::parameters() { return params_; }

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               AdamState& state, const AdamConfig& cfg, int t) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: size mismatch");
  if (cfg.beta1 <= 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 <= 0.0 || cfg.beta2 >= 1.0) {
    throw std::invalid_argument("adam_step: betas must lie in (0,1)");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.alpha * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Synthetic images and training
// ---------------------------------------------------------------------------

LabeledImages make_synthetic_images(int n, int h, int w, std::uint64_t seed) {
  if (h < 10) throw std::invalid_argument("synthetic images: need height >= 10");
  Rng rng(seed);
  LabeledImages out;
  out.images = Tensor(n, 1, h, w);
  out.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.uniform_index(5));
    out.labels[static_cast<std::size_t>(i)] = label;
    // Bright band in the class's vertical fifth, faint noise elsewhere.
    const int band_top = label * h / 5;
    const int band_bottom = std::min(h, band_top + std::max(1, h / 5));
    for (int r = 0; r < h; ++r) {
      for (int col = 0; col < w; ++col) {
        const bool in_band = r >= band_top && r < band_bottom;
        out.images.at(i, 0, r, col) = (in_band ? 1.0 : 0.0) + 0.05 * rng.normal();
      }
    }
  }
  return out;
}

double accuracy(const Tensor& probs, const std::vector<int>& labels) {
  int correct = 0;
  for (int i = 0; i < probs.n; ++i) {
    int best = 0;
    for (int k = 1; k < probs.c; ++k) {
      if (probs.at(i, k, 0, 0) > probs.at(i, best, 0, 0)) best = k;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return probs.n ? static_cast<double>(correct) / probs.n : 0.0;
}

double rmse_from_probs(const Tensor& probs, const std::vector<int>& labels,
                       GradeMode mode) {
  if (static_cast<std::size_t>(probs.n) != labels.size()) {
    throw std::invalid_argument("rmse_from_probs: label count mismatch");
  }
  double sse = 0.0;
  for (int i = 0; i < probs.n; ++i) {
    double grade = 0.0;
    if (mode == GradeMode::expectation) {
      for (int k = 0; k < probs.c; ++k) grade += k * probs.at(i, k, 0, 0);
    } else {
      int best = 0;
      for (int k = 1; k < probs.c; ++k) {
        if (probs.at(i, k, 0, 0) > probs.at(i, best, 0, 0)) best = k;
      }
      grade = best;
    }
    const double d = grade - labels[static_cast<std::size_t>(i)];
    sse += d * d;
  }
  return std::sqrt(sse / probs.n);
}

namespace {

Tensor slice_rows(const Tensor& x, const std::vector<int>& rows) {
  Tensor out(static_cast<int>(rows.size()), x.c, x.h, x.w);
  const std::size_t stride = static_cast<std::size_t>(x.c) * x.h * x.w;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(x.v.begin() + static_cast<std::ptrdiff_t>(rows[r] * stride), stride,
                out.v.begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  return out;
}

}  // namespace

TrainHistory train(Network& net, const LabeledImages& train_set,
                   const LabeledImages& val_set, int epochs, int batch_size,
                   const AdamConfig& cfg, std::uint64_t seed) {
  const int n = train_set.images.n;
  if (n < 1) throw std::invalid_argument("train: empty training set");
  {
    std::vector<bool> present(5, false);
    for (int l : train_set.labels) present[static_cast<std::size_t>(l)] = true;
    int classes = 0;
    for (bool b : present) classes += b;
    if (classes < 2) throw std::invalid_argument("train: need at least 2 classes present");
  }
  if (batch_size < 1) batch_size = n;

  TrainHistory history;
  Rng master(seed);
  std::vector<AdamState> states(net.parameters().size());
  int step = 0;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng epoch_rng = master.child(static_cast<std::uint64_t>(epoch));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    epoch_rng.shuffle(order);

    for (int start = 0; start < n; start += batch_size) {
      const int stop = std::min(n, start + batch_size);
      std::vector<int> batch_rows(order.begin() + start, order.begin() + stop);
      const Tensor xb = slice_rows(train_set.images, batch_rows);
      std::vector<int> yb(batch_rows.size());
      for (std::size_t i = 0; i < batch_rows.size(); ++i) {
        yb[i] = train_set.labels[static_cast<std::size_t>(batch_rows[i])];
      }

      ++step;
      const double loss = net.loss_and_gradients(
          xb, yb, true, master.child(0x10000ULL + static_cast<std::uint64_t>(step)).seed());
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(step));
      }
      auto params = net.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        adam_step(params[p]->value, params[p]->grad, states[p], cfg, step);
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    const Tensor train_probs = net.forward(train_set.images, false);
    stats.train_loss = net.loss_value(train_probs, train_set.labels);
    stats.train_acc = accuracy(train_probs, train_set.labels);
    if (val_set.images.n > 0) {
      const Tensor val_probs = net.forward(val_set.images, false);
      stats.val_loss = net.loss_value(val_probs, val_set.labels);
      stats.val_acc = accuracy(val_probs, val_set.labels);
    }
    history.epochs.push_back(stats);
  }
  return history;
}

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,train_acc,val_acc\n";
  for (const auto& e : epochs) {
    out += csv::format_row({std::to_string(e.epoch), csv::format_double(e.train_loss),
                            csv::format_double(e.val_loss), csv::format_double(e.train_acc),
                            csv::format_double(e.val_acc)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

GradCheckResult gradient_check(Network& net, const Tensor& x,
                               const std::vector<int>& labels, double step) {
  // One fixed dropout seed keeps the loss a deterministic function of the
  // parameters across all evaluations.
  const std::uint64_t mask_seed = 1234567;
  net.loss_and_gradients(x, labels, true, mask_seed);

  GradCheckResult res;
  auto params = net.parameters();
  std::vector<std::vector<double>> analytic;
  for (ParamTensor* p : params) analytic.push_back(p->grad);

  for (std::size_t t = 0; t < params.size(); ++t) {
    ParamTensor* p = params[t];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + step;
      const Tensor up = net.forward(x, true, mask_seed);
      const double loss_up = net.loss_value(up, labels);
      p->value[i] = keep - step;
      const Tensor dn = net.forward(x, true, mask_seed);
      const double loss_dn = net.loss_value(dn, labels);
      p->value[i] = keep;

      const double numeric = (loss_up - loss_dn) / (2.0 * step);
      const double a = analytic[t][i];
      const double rel = std::fabs(a - numeric) /
                         std::max({std::fabs(a), std::fabs(numeric), 1e-4});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace koa::cnn
