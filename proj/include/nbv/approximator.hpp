#ifndef NBV_APPROXIMATOR_HPP_
#define NBV_APPROXIMATOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "nbv/common.hpp"

namespace nbv {

/// Fully-connected gain network: `layers` linear layers (ReLU between them,
/// sigmoid on the single output), `width` units per hidden layer.
inline constexpr int kMaxWidth = 256;

struct NetworkConfig {
  int layers = 6;
  int width = 64;
  double learning_rate = 2e-3;
  int epochs = 500;
  int batch_size = 32;
  int patience = 50;
  double min_improvement = 1e-6;
  std::uint64_t seed = 0;

  void validate() const {
    if (layers != 4 && layers != 6 && layers != 8 && layers != 10)
      throw ConfigError("network layers must be one of 4, 6, 8, 10");
    if (width < 8 || width > kMaxWidth) throw ConfigError("network width must lie in [8, 256]");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (epochs < 0 || batch_size < 1 || patience < 1)
      throw ConfigError("epochs >= 0, batch_size >= 1 and patience >= 1 required");
  }
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

/// Per-query instrumentation.
struct QueryStats {
  std::size_t queries = 0;
  std::size_t matvec_products = 0;
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
};

/// g_phi: maps a 3D position to a gain estimate in (0, 1). Inputs are
/// normalized by (p - center) / scale and clamped to [-2, 2]^3.
class GainApproximator {
 public:
  GainApproximator() = default;

  GainApproximator(const NetworkConfig& cfg, const Vec3& center, double scale)
      : center_(center), scale_(scale) {
    cfg.validate();
    if (!(scale > 0.0)) throw Error("approximator input scale must be positive");
    std::mt19937_64 rng(cfg.seed);
    int in = 3;
    for (int l = 0; l < cfg.layers; ++l) {
      const bool last = l + 1 == cfg.layers;
      const int out = last ? 1 : cfg.width;
      // He-uniform for ReLU layers, Glorot-uniform for the output layer.
      const double limit = last ? std::sqrt(6.0 / (in + out)) : std::sqrt(6.0 / in);
      std::uniform_real_distribution<double> dist(-limit, limit);
      DenseLayer layer;
      layer.weight.resize(out, in);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
      layer.bias = Eigen::VectorXd::Zero(out);
      layers_.push_back(std::move(layer));
      in = out;
    }
    sync_inference();
  }

  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access; queries fall back to double precision until
  /// sync_inference() is called again.
  std::vector<DenseLayer>& layers() {
    inference_stale_ = true;
    return layers_;
  }

  /// Refreshes the single-precision copy of the weights used by query().
  void sync_inference() {
    weight_f_.clear();
    bias_f_.clear();
    for (const auto& l : layers_) {
      weight_f_.push_back(l.weight.cast<float>());
      bias_f_.push_back(l.bias.cast<float>());
    }
    inference_stale_ = false;
  }
  const Vec3& center() const { return center_; }
  double scale() const { return scale_; }
  const std::vector<double>& loss_history() const { return loss_history_; }
  double train_seconds() const { return train_seconds_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  Eigen::Vector3d normalize_input(const Vec3& p) const {
    return ((p - center_) / scale_).cwiseMax(-2.0).cwiseMin(2.0);
  }

  /// One forward pass in single precision; activations live on the stack.
  double query(const Vec3& p, QueryStats* stats = nullptr) const {
    if (inference_stale_) return query_double(p, stats);
    using Act = Eigen::Matrix<float, Eigen::Dynamic, 1, 0, kMaxWidth, 1>;
    Act h = normalize_input(p).cast<float>(), z;
    for (std::size_t l = 0; l < weight_f_.size(); ++l) {
      z.noalias() = weight_f_[l] * h;
      z += bias_f_[l];
      if (stats) ++stats->matvec_products;
      if (l + 1 < weight_f_.size())
        h = z.cwiseMax(0.0f);
      else
        h = z;
    }
    if (stats) ++stats->queries;
    return sigmoid(static_cast<double>(h[0]));
  }

  /// Forward pass with the double-precision training weights.
  double query_double(const Vec3& p, QueryStats* stats = nullptr) const {
    using Act = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxWidth, 1>;
    Act h = normalize_input(p), z;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      z.noalias() = layers_[l].weight * h;
      z += layers_[l].bias;
      if (stats) ++stats->matvec_products;
      if (l + 1 < layers_.size())
        h = z.cwiseMax(0.0);
      else
        h = z;
    }
    if (stats) ++stats->queries;
    return sigmoid(h[0]);
  }

  double operator()(const Vec3& p) const { return query(p); }

  /// Mean squared error over the columns of `inputs` (normalized 3 x B) and
  /// its gradient with respect to every parameter.
  double loss_and_gradient(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                           Gradients* grad) const {
    const std::size_t L = layers_.size();
    const auto batch = static_cast<double>(inputs.cols());
    std::vector<Eigen::MatrixXd> acts(L + 1);
    std::vector<Eigen::MatrixXd> pre(L);
    acts[0] = inputs;
    for (std::size_t l = 0; l < L; ++l) {
      pre[l] = (layers_[l].weight * acts[l]).colwise() + layers_[l].bias;
      acts[l + 1] = l + 1 < L ? Eigen::MatrixXd(pre[l].cwiseMax(0.0)) : pre[l];
    }
    const Eigen::RowVectorXd out = pre[L - 1].row(0).unaryExpr([](double z) { return sigmoid(z); });
    const Eigen::RowVectorXd residual = out - targets.transpose();
    const double loss = residual.squaredNorm() / batch;
    if (!grad) return loss;

    grad->weight.resize(L);
    grad->bias.resize(L);
    // dL/dz for the output pre-activation: 2 (g - I) g (1 - g) / B.
    Eigen::MatrixXd delta =
        (2.0 / batch) * residual.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix()));
    for (std::size_t l = L; l-- > 0;) {
      grad->weight[l] = delta * acts[l].transpose();
      grad->bias[l] = delta.rowwise().sum();
      if (l > 0) {
        delta = (layers_[l].weight.transpose() * delta)
                    .cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
      }
    }
    return loss;
  }

  double loss(std::span<const Vec3> points, std::span<const double> targets) const {
    return loss_and_gradient(input_matrix(points), target_vector(targets), nullptr);
  }

  Eigen::MatrixXd input_matrix(std::span<const Vec3> points) const {
    Eigen::MatrixXd x(3, points.size());
    for (std::size_t i = 0; i < points.size(); ++i) x.col(i) = normalize_input(points[i]);
    return x;
  }

  static Eigen::VectorXd target_vector(std::span<const double> targets) {
    Eigen::VectorXd y(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) y[i] = targets[i];
    return y;
  }

  /// Flat parameter access (weights row-major per layer, then bias).
  double& parameter(std::size_t idx) {
    inference_stale_ = true;
    for (auto& l : layers_) {
      const auto nw = static_cast<std::size_t>(l.weight.size());
      if (idx < nw) return l.weight(idx / l.weight.cols(), idx % l.weight.cols());
      idx -= nw;
      if (idx < static_cast<std::size_t>(l.bias.size())) return l.bias[idx];
      idx -= l.bias.size();
    }
    throw Error("parameter index out of range");
  }

  static double gradient_entry(const GainApproximator& model, const Gradients& g, std::size_t idx) {
    for (std::size_t l = 0; l < model.layers_.size(); ++l) {
      const auto& W = g.weight[l];
      const auto nw = static_cast<std::size_t>(W.size());
      if (idx < nw) return W(idx / W.cols(), idx % W.cols());
      idx -= nw;
      if (idx < static_cast<std::size_t>(g.bias[l].size())) return g.bias[l][idx];
      idx -= g.bias[l].size();
    }
    throw Error("parameter index out of range");
  }

  // -- persistence ---------------------------------------------------------

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) {
      std::vector<double> w;
      w.reserve(l.weight.size());
      for (int r = 0; r < l.weight.rows(); ++r)
        for (int c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
      layers.push_back({{"in", l.weight.cols()},
                        {"out", l.weight.rows()},
                        {"weights", w},
                        {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return {{"center", {center_.x(), center_.y(), center_.z()}},
            {"scale", scale_},
            {"layers", layers}};
  }

  static GainApproximator from_json(const nlohmann::json& j) {
    GainApproximator m;
    const auto c = j.at("center").get<std::vector<double>>();
    if (c.size() != 3) throw Error("model json: center must have 3 entries");
    m.center_ = Vec3(c[0], c[1], c[2]);
    m.scale_ = j.at("scale").get<double>();
    int expected_in = 3;
    for (const auto& jl : j.at("layers")) {
      const int in = jl.at("in").get<int>();
      const int out = jl.at("out").get<int>();
      const auto w = jl.at("weights").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (in != expected_in || w.size() != static_cast<std::size_t>(in) * out ||
          b.size() != static_cast<std::size_t>(out))
        throw Error("model json: inconsistent layer dimensions");
      DenseLayer layer;
      layer.weight.resize(out, in);
      for (int r = 0; r < out; ++r)
        for (int cc = 0; cc < in; ++cc) layer.weight(r, cc) = w[static_cast<std::size_t>(r) * in + cc];
      layer.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), out);
      m.layers_.push_back(std::move(layer));
      expected_in = out;
    }
    if (m.layers_.empty() || expected_in != 1) throw Error("model json: output must be scalar");
    m.sync_inference();
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << to_json().dump();
  }

  static GainApproximator load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return from_json(nlohmann::json::parse(in));
  }

  void write_loss_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < loss_history_.size(); ++e) out << e + 1 << "," << loss_history_[e] << "\n";
  }

  static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

 private:
  friend GainApproximator fit(std::span<const Vec3>, std::span<const double>, const Vec3&, double,
                              const NetworkConfig&);

  std::vector<DenseLayer> layers_;
  std::vector<Eigen::MatrixXf> weight_f_;
  std::vector<Eigen::VectorXf> bias_f_;
  bool inference_stale_ = true;
  Vec3 center_ = Vec3::Zero();
  double scale_ = 1.0;
  std::vector<double> loss_history_;
  double train_seconds_ = 0.0;
};

/// Fits g_phi to (points, targets) with mini-batch Adam on the mean squared
/// error. Returns the parameters with the lowest full-set loss seen, so the
/// final loss never exceeds the initial one. Throws on a non-finite loss.
inline GainApproximator fit(std::span<const Vec3> points, std::span<const double> targets,
                            const Vec3& center, double scale, const NetworkConfig& cfg) {
  if (points.size() != targets.size()) throw Error("fit: points and targets differ in size");
  if (points.size() < 8) throw Error("fit: at least 8 samples required");
  Stopwatch clock;
  GainApproximator model(cfg, center, scale);
  const Eigen::MatrixXd x = model.input_matrix(points);
  const Eigen::VectorXd y = GainApproximator::target_vector(targets);
  const std::size_t L = model.layers_.size();

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Eigen::MatrixXd> mw(L), vw(L);
  std::vector<Eigen::VectorXd> mb(L), vb(L);
  for (std::size_t l = 0; l < L; ++l) {
    mw[l] = vw[l] = Eigen::MatrixXd::Zero(model.layers_[l].weight.rows(), model.layers_[l].weight.cols());
    mb[l] = vb[l] = Eigen::VectorXd::Zero(model.layers_[l].bias.size());
  }

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);

  double best_loss = model.loss_and_gradient(x, y, nullptr);
  if (!std::isfinite(best_loss)) throw Error("fit: non-finite initial loss");
  std::vector<DenseLayer> best_params = model.layers_;
  int best_epoch = 0;
  long t = 0;
  Gradients grad;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Eigen::MatrixXd xb(3, end - start);
      Eigen::VectorXd yb(end - start);
      for (std::size_t i = start; i < end; ++i) {
        xb.col(i - start) = x.col(order[i]);
        yb[i - start] = y[order[i]];
      }
      model.loss_and_gradient(xb, yb, &grad);
      ++t;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
      const double step = cfg.learning_rate * std::sqrt(c2) / c1;
      for (std::size_t l = 0; l < L; ++l) {
        mw[l] = beta1 * mw[l] + (1.0 - beta1) * grad.weight[l];
        vw[l] = beta2 * vw[l] + (1.0 - beta2) * grad.weight[l].cwiseAbs2();
        model.layers_[l].weight.array() -= step * mw[l].array() / (vw[l].array().sqrt() + eps);
        mb[l] = beta1 * mb[l] + (1.0 - beta1) * grad.bias[l];
        vb[l] = beta2 * vb[l] + (1.0 - beta2) * grad.bias[l].cwiseAbs2();
        model.layers_[l].bias.array() -= step * mb[l].array() / (vb[l].array().sqrt() + eps);
      }
    }
    const double loss = model.loss_and_gradient(x, y, nullptr);
    if (!std::isfinite(loss)) throw Error("fit: loss diverged at epoch " + std::to_string(epoch));
    model.loss_history_.push_back(loss);
    if (loss < best_loss - cfg.min_improvement) {
      best_loss = loss;
      best_params = model.layers_;
      best_epoch = epoch;
    } else if (loss < best_loss) {
      best_loss = loss;
      best_params = model.layers_;
    }
    if (epoch - best_epoch >= cfg.patience) break;
  }
  model.layers_ = std::move(best_params);
  model.sync_inference();
  model.train_seconds_ = clock.seconds();
  return model;
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients of the single-point loss (g(p) - target)^2
/// against central differences (step h) on `count` distinct random
/// parameters. Relative error: |a - n| / max(|a|, |n|, 1e-7).
inline GradientCheckResult gradient_check(const GainApproximator& model, const Vec3& p,
                                          double target, std::size_t count = 64,
                                          std::uint64_t seed = 1, double h = 1e-5) {
  GainApproximator probe = model;
  Eigen::MatrixXd x(3, 1);
  x.col(0) = probe.normalize_input(p);
  Eigen::VectorXd y(1);
  y[0] = target;
  Gradients grad;
  probe.loss_and_gradient(x, y, &grad);

  const std::size_t total = probe.parameter_count();
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, total));

  GradientCheckResult res;
  for (std::size_t k : idx) {
    double& w = probe.parameter(k);
    const double saved = w;
    w = saved + h;
    const double up = probe.loss_and_gradient(x, y, nullptr);
    w = saved - h;
    const double down = probe.loss_and_gradient(x, y, nullptr);
    w = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = GainApproximator::gradient_entry(probe, grad, k);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    res.max_relative_error = std::max(res.max_relative_error, std::abs(analytic - numeric) / denom);
    ++res.checked;
  }
  return res;
}

}  // namespace nbv

#endif  // NBV_APPROXIMATOR_HPP_
