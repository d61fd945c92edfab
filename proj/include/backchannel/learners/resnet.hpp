#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "backchannel/learners/model.hpp"

namespace bc::learners {

struct ResNetParams {
  int blocks = 3;
  int filters = 64;
  std::vector<int> kernels{8, 5, 3};
  int epochs = 100;
  int batch_size = 16;
  double learning_rate = 1e-3;
};

/// Residual 1-D convolutional classifier over variable-length frame
/// matrices. Each block applies three "same"-padded convolutions with ReLU
/// between them, adds a shortcut (1x1 projection when the channel count
/// changes), then ReLU. Global average pooling over time feeds a dense
/// softmax layer.
class ResNetNetwork {
 public:
  ResNetNetwork() = default;
  ResNetNetwork(std::size_t channels, const ResNetParams& p, std::size_t classes)
      : channels_(channels), classes_(classes), filters_(static_cast<std::size_t>(p.filters)) {
    if (p.blocks < 1 || p.filters < 1 || p.kernels.empty())
      throw ConfigError("resnet_ts needs blocks >= 1, filters >= 1 and at least one kernel");
    for (int k : p.kernels)
      if (k < 1) throw ConfigError("resnet_ts kernel sizes must be >= 1");
    std::size_t off = 0;
    auto add = [&](std::size_t in, std::size_t out, std::size_t k) {
      convs_.push_back({in, out, k, off});
      off += out * k * in + out;
      return convs_.size() - 1;
    };
    std::size_t in = channels;
    for (int b = 0; b < p.blocks; ++b) {
      Block blk;
      std::size_t c = in;
      for (int k : p.kernels) {
        blk.convs.push_back(add(c, filters_, static_cast<std::size_t>(k)));
        c = filters_;
      }
      if (in != filters_) blk.shortcut = static_cast<long>(add(in, filters_, 1));
      blocks_.push_back(blk);
      in = filters_;
    }
    dense_offset_ = off;
    params_ = off + classes * filters_ + classes;
  }

  std::size_t parameter_count() const { return params_; }
  std::size_t channels() const { return channels_; }

  std::vector<double> initialize(Rng& rng) const {
    std::vector<double> theta(params_, 0.0);
    for (const auto& c : convs_) {
      const double limit = std::sqrt(6.0 / static_cast<double>(c.in * c.k));
      for (std::size_t i = 0; i < c.out * c.k * c.in; ++i) theta[c.offset + i] = rng.uniform(-limit, limit);
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(filters_));
    for (std::size_t i = 0; i < classes_ * filters_; ++i) theta[dense_offset_ + i] = rng.uniform(-limit, limit);
    return theta;
  }

  std::vector<double> forward(const std::vector<double>& theta, const features::Series& x) const {
    Trace tr;
    return run(theta, x, tr);
  }

  /// Mean cross-entropy over `batch` and its gradient with respect to theta.
  double loss_and_grad(const std::vector<double>& theta, const std::vector<const features::Series*>& X,
                       const std::vector<int>& y, const std::vector<std::size_t>& batch,
                       std::vector<double>& grad) const {
    grad.assign(params_, 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (std::size_t i : batch) {
      Trace tr;
      const auto p = run(theta, *X[i], tr);
      const auto t = static_cast<std::size_t>(y[i]);
      loss -= std::log(std::max(p[t], 1e-300)) * inv;
      backward(theta, tr, p, t, inv, grad);
    }
    return loss;
  }

 private:
  struct Conv {
    std::size_t in, out, k, offset;
  };
  struct Block {
    std::vector<std::size_t> convs;
    long shortcut = -1;
  };
  /// Activations per block: input, post-ReLU conv outputs, last conv output,
  /// shortcut output, block output. All time-major (T x channels).
  struct BlockTrace {
    std::vector<double> input;
    std::vector<std::vector<double>> hidden;
    std::vector<double> output;
  };
  struct Trace {
    std::size_t T = 0;
    std::vector<BlockTrace> blocks;
    std::vector<double> pooled;
  };

  static void conv_forward(const Conv& c, const double* theta, const std::vector<double>& x, std::size_t T,
                           std::vector<double>& y) {
    const double* W = theta + c.offset;
    const double* b = W + c.out * c.k * c.in;
    const long pl = static_cast<long>((c.k - 1) / 2);
    y.assign(T * c.out, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      double* yt = y.data() + t * c.out;
      for (std::size_t o = 0; o < c.out; ++o) yt[o] = b[o];
      for (std::size_t j = 0; j < c.k; ++j) {
        const long s = static_cast<long>(t) + static_cast<long>(j) - pl;
        if (s < 0 || s >= static_cast<long>(T)) continue;
        const double* xs = x.data() + static_cast<std::size_t>(s) * c.in;
        for (std::size_t o = 0; o < c.out; ++o) {
          const double* w = W + (o * c.k + j) * c.in;
          double acc = 0.0;
          for (std::size_t i = 0; i < c.in; ++i) acc += w[i] * xs[i];
          yt[o] += acc;
        }
      }
    }
  }

  /// Accumulates dW, db and (when dx is non-null) dx from dy.
  static void conv_backward(const Conv& c, const double* theta, const std::vector<double>& x, std::size_t T,
                            const std::vector<double>& dy, double* grad, std::vector<double>* dx) {
    const double* W = theta + c.offset;
    double* gW = grad + c.offset;
    double* gb = gW + c.out * c.k * c.in;
    const long pl = static_cast<long>((c.k - 1) / 2);
    if (dx) dx->assign(T * c.in, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const double* dyt = dy.data() + t * c.out;
      for (std::size_t o = 0; o < c.out; ++o) gb[o] += dyt[o];
      for (std::size_t j = 0; j < c.k; ++j) {
        const long s = static_cast<long>(t) + static_cast<long>(j) - pl;
        if (s < 0 || s >= static_cast<long>(T)) continue;
        const double* xs = x.data() + static_cast<std::size_t>(s) * c.in;
        double* dxs = dx ? dx->data() + static_cast<std::size_t>(s) * c.in : nullptr;
        for (std::size_t o = 0; o < c.out; ++o) {
          const double g = dyt[o];
          if (g == 0.0) continue;
          double* gw = gW + (o * c.k + j) * c.in;
          const double* w = W + (o * c.k + j) * c.in;
          for (std::size_t i = 0; i < c.in; ++i) gw[i] += g * xs[i];
          if (dxs)
            for (std::size_t i = 0; i < c.in; ++i) dxs[i] += g * w[i];
        }
      }
    }
  }

  std::vector<double> run(const std::vector<double>& theta, const features::Series& x, Trace& tr) const {
    if (x.channels != channels_)
      throw DataError(fmt::format("resnet_ts expects {} channels, got {}", channels_, x.channels));
    if (x.frames == 0) throw DataError("resnet_ts cannot classify an empty window");
    const std::size_t T = x.frames;
    tr.T = T;
    std::vector<double> cur = x.values;
    for (const auto& blk : blocks_) {
      BlockTrace bt;
      bt.input = cur;
      std::vector<double> h = cur;
      for (std::size_t m = 0; m < blk.convs.size(); ++m) {
        std::vector<double> z;
        conv_forward(convs_[blk.convs[m]], theta.data(), h, T, z);
        if (m + 1 < blk.convs.size())
          for (double& v : z) v = std::max(v, 0.0);
        bt.hidden.push_back(z);
        h = std::move(z);
      }
      if (blk.shortcut >= 0) {
        std::vector<double> s;
        conv_forward(convs_[static_cast<std::size_t>(blk.shortcut)], theta.data(), cur, T, s);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += s[i];
      } else {
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += cur[i];
      }
      for (double& v : h) v = std::max(v, 0.0);
      bt.output = h;
      tr.blocks.push_back(std::move(bt));
      cur = std::move(h);
    }
    tr.pooled.assign(filters_, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < filters_; ++f) tr.pooled[f] += cur[t * filters_ + f];
    for (double& v : tr.pooled) v /= static_cast<double>(T);
    const double* Wd = theta.data() + dense_offset_;
    const double* bd = Wd + classes_ * filters_;
    std::vector<double> logits(classes_);
    for (std::size_t c = 0; c < classes_; ++c) {
      double s = bd[c];
      for (std::size_t f = 0; f < filters_; ++f) s += Wd[c * filters_ + f] * tr.pooled[f];
      logits[c] = s;
    }
    return softmax(logits);
  }

  void backward(const std::vector<double>& theta, const Trace& tr, const std::vector<double>& p, std::size_t target,
                double scale, std::vector<double>& grad) const {
    const std::size_t T = tr.T;
    const double* Wd = theta.data() + dense_offset_;
    double* gWd = grad.data() + dense_offset_;
    double* gbd = gWd + classes_ * filters_;
    std::vector<double> dpool(filters_, 0.0);
    for (std::size_t c = 0; c < classes_; ++c) {
      const double d = (p[c] - (c == target ? 1.0 : 0.0)) * scale;
      gbd[c] += d;
      for (std::size_t f = 0; f < filters_; ++f) {
        gWd[c * filters_ + f] += d * tr.pooled[f];
        dpool[f] += d * Wd[c * filters_ + f];
      }
    }
    std::vector<double> dout(T * filters_);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < filters_; ++f) dout[t * filters_ + f] = dpool[f] / static_cast<double>(T);

    for (std::size_t b = blocks_.size(); b-- > 0;) {
      const auto& blk = blocks_[b];
      const auto& bt = tr.blocks[b];
      std::vector<double> dz = dout;
      for (std::size_t i = 0; i < dz.size(); ++i)
        if (bt.output[i] <= 0.0) dz[i] = 0.0;
      std::vector<double> dinput;
      if (blk.shortcut >= 0) {
        conv_backward(convs_[static_cast<std::size_t>(blk.shortcut)], theta.data(), bt.input, T, dz, grad.data(),
                      &dinput);
      } else {
        dinput = dz;
      }
      std::vector<double> dh = dz;
      for (std::size_t m = blk.convs.size(); m-- > 0;) {
        const auto& x = m == 0 ? bt.input : bt.hidden[m - 1];
        std::vector<double> dx;
        conv_backward(convs_[blk.convs[m]], theta.data(), x, T, dh, grad.data(), &dx);
        if (m > 0)
          for (std::size_t i = 0; i < dx.size(); ++i)
            if (bt.hidden[m - 1][i] <= 0.0) dx[i] = 0.0;
        dh = std::move(dx);
      }
      for (std::size_t i = 0; i < dinput.size(); ++i) dinput[i] += dh[i];
      dout = std::move(dinput);
    }
  }

  std::size_t channels_ = 0;
  std::size_t classes_ = 0;
  std::size_t filters_ = 0;
  std::vector<Conv> convs_;
  std::vector<Block> blocks_;
  std::size_t dense_offset_ = 0;
  std::size_t params_ = 0;
};

class ResNetModel final : public Model {
 public:
  ResNetModel(ResNetParams p, std::size_t classes, std::size_t channels, std::vector<double> mean,
              std::vector<double> scale, std::vector<double> theta)
      : params_(std::move(p)), net_(channels, params_, classes), mean_(std::move(mean)),
        scale_(std::move(scale)), theta_(std::move(theta)) {
    if (theta_.size() != net_.parameter_count()) throw DataError("resnet_ts parameter count mismatch");
  }

  static std::shared_ptr<ResNetModel> fit(const ResNetParams& p, const std::vector<Example>& X,
                                          const std::vector<int>& y, std::size_t classes, std::uint64_t seed) {
    if (X.size() != y.size()) throw DataError("examples/labels size mismatch");
    for (const auto& e : X)
      if (!e.series) throw DataError("resnet_ts requires frame matrices for every example");
    check_labels(y, classes);
    if (p.epochs < 1 || p.batch_size < 1 || !(p.learning_rate > 0.0))
      throw ConfigError("resnet_ts needs epochs >= 1, batch_size >= 1 and a positive learning rate");
    const std::size_t C = X.front().series->channels;
    std::vector<double> mean(C, 0.0), scale(C, 0.0);
    double frames = 0.0;
    for (const auto& e : X) {
      if (e.series->channels != C) throw DataError("resnet_ts windows have differing channel counts");
      for (std::size_t t = 0; t < e.series->frames; ++t)
        for (std::size_t c = 0; c < C; ++c) mean[c] += e.series->at(t, c);
      frames += static_cast<double>(e.series->frames);
    }
    for (double& m : mean) m /= frames;
    for (const auto& e : X)
      for (std::size_t t = 0; t < e.series->frames; ++t)
        for (std::size_t c = 0; c < C; ++c) scale[c] += (e.series->at(t, c) - mean[c]) * (e.series->at(t, c) - mean[c]);
    for (double& s : scale) {
      s = std::sqrt(s / frames);
      if (s < features::kDegenerateStd) s = 1.0;
    }
    std::vector<features::Series> normalized;
    normalized.reserve(X.size());
    for (const auto& e : X) normalized.push_back(normalize(*e.series, mean, scale));
    std::vector<const features::Series*> ptrs;
    for (const auto& s : normalized) ptrs.push_back(&s);

    ResNetNetwork net(C, p, classes);
    Rng rng(seed);
    auto theta = net.initialize(rng);
    // Adam
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m1(theta.size(), 0.0), m2(theta.size(), 0.0), grad;
    std::vector<std::size_t> order(X.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(p.batch_size);
    long step = 0;
    for (int epoch = 0; epoch < p.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += bs) {
        std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                       order.begin() + static_cast<long>(std::min(order.size(), start + bs)));
        net.loss_and_grad(theta, ptrs, y, batch, grad);
        ++step;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < theta.size(); ++i) {
          m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
          m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i] * grad[i];
          theta[i] -= p.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps);
        }
      }
    }
    return std::make_shared<ResNetModel>(p, classes, C, std::move(mean), std::move(scale), std::move(theta));
  }

  std::vector<double> predict_proba(const Example& e) const override {
    if (!e.series) throw DataError("resnet_ts requires a frame matrix");
    return net_.forward(theta_, normalize(*e.series, mean_, scale_));
  }

  void save(ArchiveWriter& out) const override {
    out.put_int("channels", static_cast<long long>(net_.channels()));
    out.put_int("blocks", params_.blocks);
    out.put_int("filters", params_.filters);
    out.put("kernels", params_.kernels);
    out.put("frame_mean", mean_);
    out.put("frame_scale", scale_);
    out.put("theta", theta_);
  }

  static std::shared_ptr<ResNetModel> load(ArchiveReader& in, std::size_t classes) {
    const auto C = static_cast<std::size_t>(in.get_int("channels"));
    ResNetParams p;
    p.blocks = static_cast<int>(in.get_int("blocks"));
    p.filters = static_cast<int>(in.get_int("filters"));
    p.kernels = in.get_ints("kernels");
    auto mean = in.get_vector("frame_mean");
    auto scale = in.get_vector("frame_scale");
    auto theta = in.get_vector("theta");
    return std::make_shared<ResNetModel>(p, classes, C, std::move(mean), std::move(scale), std::move(theta));
  }

 private:
  static void check_labels(const std::vector<int>& y, std::size_t classes) {
    if (y.empty()) throw DataError("empty training set");
    std::vector<bool> seen(classes, false);
    for (int l : y) {
      if (l < 0 || static_cast<std::size_t>(l) >= classes)
        throw DataError(fmt::format("label {} outside [0, {})", l, classes));
      seen[static_cast<std::size_t>(l)] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2)
      throw DataError("training labels contain fewer than two classes");
  }

  static features::Series normalize(const features::Series& s, const std::vector<double>& mean,
                                    const std::vector<double>& scale) {
    if (s.channels != mean.size())
      throw DataError(fmt::format("resnet_ts expects {} channels, got {}", mean.size(), s.channels));
    features::Series out = s;
    for (std::size_t t = 0; t < s.frames; ++t)
      for (std::size_t c = 0; c < s.channels; ++c) out.at(t, c) = (s.at(t, c) - mean[c]) / scale[c];
    return out;
  }

  ResNetParams params_;
  ResNetNetwork net_;
  std::vector<double> mean_, scale_;
  std::vector<double> theta_;
};

}  // namespace bc::learners
