#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "backchannel/learners/model.hpp"

namespace bc::learners {

struct MlpParams {
  std::vector<int> hidden{64, 32};
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 200;
  int batch_size = 32;
};

/// Fully connected ReLU network with a softmax output, parameters stored in a
/// single flat vector: per layer the weights (out x in, row-major) followed by
/// the biases.
class MlpNetwork {
 public:
  MlpNetwork() = default;
  MlpNetwork(std::size_t inputs, const std::vector<int>& hidden, std::size_t classes) {
    sizes_.push_back(inputs);
    for (int h : hidden) {
      if (h < 1) throw ConfigError("mlp layer sizes must be >= 1");
      sizes_.push_back(static_cast<std::size_t>(h));
    }
    sizes_.push_back(classes);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(off);
      off += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
    }
    params_ = off;
  }

  std::size_t parameter_count() const { return params_; }
  const std::vector<std::size_t>& sizes() const { return sizes_; }

  /// He-uniform weights, zero biases.
  std::vector<double> initialize(Rng& rng) const {
    std::vector<double> theta(params_, 0.0);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(sizes_[l]));
      for (std::size_t i = 0; i < sizes_[l + 1] * sizes_[l]; ++i)
        theta[offsets_[l] + i] = rng.uniform(-limit, limit);
    }
    return theta;
  }

  std::vector<double> forward(const std::vector<double>& theta, const std::vector<double>& x) const {
    std::vector<double> a = x;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) a = layer(theta, l, a, l + 2 < sizes_.size());
    return softmax(a);
  }

  /// Mean cross-entropy over `batch` and its gradient with respect to theta.
  double loss_and_grad(const std::vector<double>& theta, const std::vector<std::vector<double>>& X,
                       const std::vector<int>& y, const std::vector<std::size_t>& batch,
                       std::vector<double>& grad) const {
    grad.assign(params_, 0.0);
    const std::size_t L = sizes_.size() - 1;
    std::vector<std::vector<double>> acts(L + 1);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch) {
      acts[0] = X[i];
      for (std::size_t l = 0; l < L; ++l) acts[l + 1] = layer(theta, l, acts[l], l + 1 < L);
      auto p = softmax(acts[L]);
      const auto t = static_cast<std::size_t>(y[i]);
      loss -= std::log(std::max(p[t], 1e-300)) * inv;
      std::vector<double> delta = p;
      delta[t] -= 1.0;
      for (std::size_t l = L; l-- > 0;) {
        const std::size_t in = sizes_[l], out = sizes_[l + 1];
        const double* W = theta.data() + offsets_[l];
        double* gW = grad.data() + offsets_[l];
        double* gb = gW + out * in;
        for (std::size_t o = 0; o < out; ++o) {
          const double d = delta[o] * inv;
          gb[o] += d;
          for (std::size_t j = 0; j < in; ++j) gW[o * in + j] += d * acts[l][j];
        }
        if (l == 0) break;
        std::vector<double> prev(in, 0.0);
        for (std::size_t o = 0; o < out; ++o)
          for (std::size_t j = 0; j < in; ++j) prev[j] += W[o * in + j] * delta[o];
        for (std::size_t j = 0; j < in; ++j)
          if (acts[l][j] <= 0.0) prev[j] = 0.0;
        delta = std::move(prev);
      }
    }
    return loss;
  }

 private:
  std::vector<double> layer(const std::vector<double>& theta, std::size_t l, const std::vector<double>& a,
                            bool relu) const {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    const double* W = theta.data() + offsets_[l];
    const double* b = W + out * in;
    std::vector<double> z(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t j = 0; j < in; ++j) s += W[o * in + j] * a[j];
      z[o] = relu && s < 0.0 ? 0.0 : s;
    }
    return z;
  }

  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::size_t params_ = 0;
};

class MlpModel final : public Model {
 public:
  MlpModel(MlpParams p, std::size_t classes, features::StandardScaler scaler, std::vector<double> theta)
      : params_(std::move(p)), scaler_(std::move(scaler)),
        net_(scaler_.dim(), params_.hidden, classes), theta_(std::move(theta)) {
    if (theta_.size() != net_.parameter_count()) throw DataError("mlp parameter count mismatch");
  }

  static std::shared_ptr<MlpModel> fit(const MlpParams& p, const std::vector<Example>& X, const std::vector<int>& y,
                                       std::size_t classes, std::uint64_t seed) {
    check_training_set(X, y, classes);
    if (p.epochs < 1 || p.batch_size < 1 || !(p.learning_rate > 0.0))
      throw ConfigError("mlp needs epochs >= 1, batch_size >= 1 and a positive learning rate");
    auto scaler = features::fit_scaler(vectors_of(X));
    std::vector<std::vector<double>> pts;
    pts.reserve(X.size());
    for (const auto& e : X) pts.push_back(scaler.apply(e.x));
    MlpNetwork net(scaler.dim(), p.hidden, classes);
    Rng rng(seed);
    auto theta = net.initialize(rng);
    std::vector<double> velocity(theta.size(), 0.0), grad;
    std::vector<std::size_t> order(pts.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(p.batch_size);
    for (int epoch = 0; epoch < p.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += bs) {
        std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                       order.begin() + static_cast<long>(std::min(order.size(), start + bs)));
        net.loss_and_grad(theta, pts, y, batch, grad);
        for (std::size_t i = 0; i < theta.size(); ++i) {
          velocity[i] = p.momentum * velocity[i] - p.learning_rate * grad[i];
          theta[i] += velocity[i];
        }
      }
    }
    return std::make_shared<MlpModel>(p, classes, std::move(scaler), std::move(theta));
  }

  std::vector<double> predict_proba(const Example& e) const override {
    check_dimension(e, scaler_.dim());
    return net_.forward(theta_, scaler_.apply(e.x));
  }

  void save(ArchiveWriter& out) const override {
    out.put("hidden", params_.hidden);
    save_scaler(out, scaler_);
    out.put("theta", theta_);
  }

  static std::shared_ptr<MlpModel> load(ArchiveReader& in, std::size_t classes) {
    MlpParams p;
    p.hidden = in.get_ints("hidden");
    auto scaler = load_scaler(in);
    auto theta = in.get_vector("theta");
    return std::make_shared<MlpModel>(p, classes, std::move(scaler), std::move(theta));
  }

 private:
  MlpParams params_;
  features::StandardScaler scaler_;
  MlpNetwork net_;
  std::vector<double> theta_;
};

}  // namespace bc::learners
