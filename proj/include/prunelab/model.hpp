#pragma once

#include "prunelab/common.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/rng.hpp"
#include "prunelab/synthdata.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace prunelab {

/// sigma(z) = max(0, z)^q (poly) or max(0, z) (relu). sigma'(0) = 0 for both.
class Activation {
 public:
  enum class Kind { poly, relu };

  static Activation poly(int q);
  static Activation relu() { return Activation(Kind::relu, 1); }
  /// 0 encodes relu, q >= 2 encodes poly(q).
  static Activation from_tag(std::int64_t tag);

  Kind kind() const { return kind_; }
  /// Homogeneity degree: q for poly, 1 for relu.
  int degree() const { return q_; }
  std::int64_t tag() const { return kind_ == Kind::relu ? 0 : q_; }
  std::string name() const;

  double value(double z) const {
    if (z <= 0.0) return 0.0;
    if (kind_ == Kind::relu) return z;
    double out = z;
    for (int e = 1; e < q_; ++e) out *= z;
    return out;
  }

  double derivative(double z) const {
    if (z <= 0.0) return 0.0;
    if (kind_ == Kind::relu) return 1.0;
    double out = static_cast<double>(q_);
    for (int e = 1; e < q_; ++e) out *= z;
    return out;
  }

  /// Elementwise value / derivative over a matrix of pre-activations.
  RowMatrix values(const RowMatrix& z) const;
  RowMatrix derivatives(const RowMatrix& z) const;

  friend bool operator==(const Activation&, const Activation&) = default;

 private:
  Activation(Kind kind, int q) : kind_(kind), q_(q) {}
  Kind kind_;
  int q_;
};

/// Two-layer CNN with frozen mask. Holds the masked weights w~_{j,r} as a
/// (K*m) x d matrix; masked coordinates are zero at all times.
class MaskedNet {
 public:
  /// Weights are multiplied by the mask on construction.
  MaskedNet(Mask mask, RowMatrix weights, Activation activation, double sigma0, std::uint64_t iteration = 0);

  std::size_t K() const { return mask_.K(); }
  std::size_t m() const { return mask_.m(); }
  std::size_t d() const { return mask_.d(); }
  std::size_t neurons() const { return mask_.neurons(); }
  std::size_t neuron(std::size_t j, std::size_t r) const { return j * mask_.m() + r; }

  const RowMatrix& weights() const { return weights_; }
  const Mask& mask() const { return mask_; }
  const RowMatrix& mask_matrix() const { return mask_matrix_; }
  const Activation& activation() const { return activation_; }
  double sigma0() const { return sigma0_; }
  std::uint64_t iteration() const { return iteration_; }

  /// w~ <- w~ - eta * grad (masked), iteration += 1. On a non-finite result the
  /// net is left unchanged and NumericError is thrown.
  void apply_step(const RowMatrix& grad, double eta);

  /// Copy with weights multiplied by c.
  MaskedNet scaled(double c) const;

 private:
  Mask mask_;
  RowMatrix mask_matrix_;
  RowMatrix weights_;
  Activation activation_;
  double sigma0_;
  std::uint64_t iteration_;
};

/// Gaussian N(0, sigma0^2) draws in row-major order, then masked.
MaskedNet init_weights(std::size_t K, std::size_t m, std::size_t d, double sigma0, const Mask& mask,
                       Activation activation, Rng& rng);

struct ForwardRecord {
  std::uint64_t iteration = 0;
  RowMatrix signal_pre;  // (K*m) x n: <w~_{j,r}, mu_{y_i}>
  RowMatrix noise_pre;   // (K*m) x n: <w~_{j,r}, xi_i>
  RowMatrix outputs;     // K x n: F_j(x_i)
  RowMatrix logits;      // K x n: softmax of outputs per column
  RowMatrix lprime;      // K x n: logit_j - 1{j = y_i}
  std::vector<double> sample_loss;
  std::vector<std::size_t> predictions;  // argmax_j F_j, ties to the smallest j
  double loss = 0.0;
  std::size_t clamped_losses = 0;

  double error_rate(const Dataset& data) const;
};

/// Per-sample loss cap; log-sum-exp keeps everything below it finite.
inline constexpr double kMaxSampleLoss = 700.0;

ForwardRecord forward(const MaskedNet& net, const Dataset& data);

/// F_j(x) for one explicit two-patch input, computed directly from the patches.
Eigen::VectorXd network_outputs(const MaskedNet& net, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2);

/// grad[j][r] = (1/n) sum_i l'_{j,i} [sigma'(<w~,xi_i>) xi_i + sigma'(<w~,mu_{y_i}>) mu_{y_i}] (.) m_{j,r}.
RowMatrix gradient_from_record(const MaskedNet& net, const Dataset& data, const ForwardRecord& record);

struct LossGrad {
  double loss = 0.0;
  RowMatrix grad;
  ForwardRecord record;
};

LossGrad loss_and_grad(const MaskedNet& net, const Dataset& data);

struct EvalMetrics {
  double loss = 0.0;
  double error_rate = 0.0;
};

EvalMetrics eval_metrics(const MaskedNet& net, const Dataset& data);

/// Gradient-bound certificate: ratio = ||grad (.) M||_F^2 / (K m^{2/q} max(mu^2, sigma_n^2 p d) L_S).
struct BoundReport {
  double grad_sq_norm = 0.0;
  double loss = 0.0;
  double scale = 0.0;  // K m^{2/q} max(mu^2, sigma_n^2 p d)
  double ratio = 0.0;
  bool degenerate = false;  // L_S == 0
};

BoundReport bound_ratio(double grad_sq_norm, double loss, const MaskedNet& net, const DataConfig& data_cfg);
BoundReport grad_norm_bound_check(const MaskedNet& net, const Dataset& data);

/// Checkpoint: K, m, d (uint64), activation tag (int64), sigma0 (float64),
/// iteration (uint64), all little-endian, then K*m*d row-major float64 weights.
void save_checkpoint(const MaskedNet& net, const std::filesystem::path& path);
/// The mask must match the checkpoint's shape.
MaskedNet load_checkpoint(const std::filesystem::path& path, const Mask& mask);

}  // namespace prunelab
