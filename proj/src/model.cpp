#include "prunelab/model.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace prunelab {

namespace {

using Index = Eigen::Index;

void require_finite(const RowMatrix& mat, const std::string& what) {
  if (mat.allFinite()) return;
  const double* data = mat.data();
  const std::size_t count = static_cast<std::size_t>(mat.size());
  for (std::size_t idx = 0; idx < count; ++idx) {
    if (!std::isfinite(data[idx])) throw NumericError(what, idx);
  }
}

void require_compatible(const MaskedNet& net, const Dataset& data) {
  if (data.dim() != net.d()) throw ConfigError("model: data patch dimension does not match the network");
  if (data.classes() != net.K()) throw ConfigError("model: data class count does not match the network");
}

}  // namespace

Activation Activation::poly(int q) {
  if (q < 2) throw ConfigError("activation: polynomial degree q must be at least 2");
  return Activation(Kind::poly, q);
}

Activation Activation::from_tag(std::int64_t tag) {
  if (tag == 0) return relu();
  if (tag >= 2 && tag <= 64) return poly(static_cast<int>(tag));
  throw ConfigError("activation: unknown tag " + std::to_string(tag));
}

std::string Activation::name() const { return kind_ == Kind::relu ? "relu" : "poly" + std::to_string(q_); }

RowMatrix Activation::values(const RowMatrix& z) const {
  const RowMatrix pos = z.cwiseMax(0.0);
  if (kind_ == Kind::relu) return pos;
  RowMatrix out = pos;
  for (int e = 1; e < q_; ++e) out.array() *= pos.array();
  return out;
}

RowMatrix Activation::derivatives(const RowMatrix& z) const {
  if (kind_ == Kind::relu) return (z.array() > 0.0).cast<double>().matrix();
  const RowMatrix pos = z.cwiseMax(0.0);
  RowMatrix out = static_cast<double>(q_) * pos;
  for (int e = 2; e < q_; ++e) out.array() *= pos.array();
  return out;
}

MaskedNet::MaskedNet(Mask mask, RowMatrix weights, Activation activation, double sigma0, std::uint64_t iteration)
    : mask_(std::move(mask)),
      mask_matrix_(mask_.as_matrix()),
      weights_(std::move(weights)),
      activation_(activation),
      sigma0_(sigma0),
      iteration_(iteration) {
  if (weights_.rows() != mask_matrix_.rows() || weights_.cols() != mask_matrix_.cols()) {
    throw ConfigError("model: weight shape does not match the mask");
  }
  weights_ = weights_.cwiseProduct(mask_matrix_);
}

void MaskedNet::apply_step(const RowMatrix& grad, double eta) {
  if (grad.rows() != weights_.rows() || grad.cols() != weights_.cols()) {
    throw ConfigError("model: gradient shape does not match the weights");
  }
  RowMatrix next = weights_ - eta * grad;
  next.array() *= mask_matrix_.array();
  require_finite(next, "gd_step: non-finite weight after update");
  weights_ = std::move(next);
  ++iteration_;
}

MaskedNet MaskedNet::scaled(double c) const {
  return MaskedNet(mask_, weights_ * c, activation_, sigma0_, iteration_);
}

MaskedNet init_weights(std::size_t K, std::size_t m, std::size_t d, double sigma0, const Mask& mask,
                       Activation activation, Rng& rng) {
  if (!(sigma0 > 0.0)) throw ConfigError("model: sigma0 must be positive");
  if (mask.K() != K || mask.m() != m || mask.d() != d) throw ConfigError("model: mask shape does not match (K, m, d)");
  std::normal_distribution<double> gauss(0.0, sigma0);
  RowMatrix w(static_cast<Index>(K * m), static_cast<Index>(d));
  double* dst = w.data();
  for (Index idx = 0; idx < w.size(); ++idx) dst[idx] = gauss(rng);
  return MaskedNet(mask, std::move(w), activation, sigma0);
}

double ForwardRecord::error_rate(const Dataset& data) const {
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) wrong += predictions[i] != data.label(i);
  return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

ForwardRecord forward(const MaskedNet& net, const Dataset& data) {
  require_compatible(net, data);
  require_finite(net.weights(), "forward: non-finite weight");
  require_finite(data.noise(), "forward: non-finite input");

  const std::size_t K = net.K(), m = net.m(), n = data.size();
  const double mu = data.mu();
  const Activation& act = net.activation();

  ForwardRecord rec;
  rec.iteration = net.iteration();
  rec.noise_pre.noalias() = net.weights() * data.noise().transpose();
  const RowMatrix signal_by_class = mu * net.weights().leftCols(static_cast<Index>(K));
  rec.signal_pre.resize(static_cast<Index>(K * m), static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    rec.signal_pre.col(static_cast<Index>(i)) = signal_by_class.col(static_cast<Index>(data.label(i)));
  }

  const RowMatrix activated = act.values(rec.signal_pre) + act.values(rec.noise_pre);
  rec.outputs.resize(static_cast<Index>(K), static_cast<Index>(n));
  for (std::size_t j = 0; j < K; ++j) {
    rec.outputs.row(static_cast<Index>(j)) =
        activated.middleRows(static_cast<Index>(j * m), static_cast<Index>(m)).colwise().sum();
  }
  require_finite(rec.outputs, "forward: non-finite network output");

  rec.logits.resize(static_cast<Index>(K), static_cast<Index>(n));
  rec.lprime.resize(static_cast<Index>(K), static_cast<Index>(n));
  rec.sample_loss.resize(n);
  rec.predictions.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Index col = static_cast<Index>(i);
    const auto f = rec.outputs.col(col);
    Index argmax = 0;
    for (Index j = 1; j < static_cast<Index>(K); ++j) {
      if (f[j] > f[argmax]) argmax = j;
    }
    const double fmax = f[argmax];
    double denom = 0.0;
    for (Index j = 0; j < static_cast<Index>(K); ++j) denom += std::exp(f[j] - fmax);
    const std::size_t y = data.label(i);
    for (Index j = 0; j < static_cast<Index>(K); ++j) {
      const double logit = std::exp(f[j] - fmax) / denom;
      rec.logits(j, col) = logit;
      rec.lprime(j, col) = logit - (static_cast<std::size_t>(j) == y ? 1.0 : 0.0);
    }
    double loss = std::log(denom) + fmax - f[static_cast<Index>(y)];
    if (loss > kMaxSampleLoss) {
      loss = kMaxSampleLoss;
      ++rec.clamped_losses;
    }
    rec.sample_loss[i] = loss;
    rec.predictions[i] = static_cast<std::size_t>(argmax);
    total += loss;
  }
  rec.loss = total / static_cast<double>(n);
  return rec;
}

Eigen::VectorXd network_outputs(const MaskedNet& net, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
  if (static_cast<std::size_t>(x1.size()) != net.d() || static_cast<std::size_t>(x2.size()) != net.d()) {
    throw ConfigError("model: patch dimension does not match the network");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Index>(net.K()));
  for (std::size_t j = 0; j < net.K(); ++j) {
    for (std::size_t r = 0; r < net.m(); ++r) {
      const auto w = net.weights().row(static_cast<Index>(net.neuron(j, r)));
      out[static_cast<Index>(j)] += net.activation().value(w.dot(x1.transpose())) +
                                    net.activation().value(w.dot(x2.transpose()));
    }
  }
  return out;
}

RowMatrix gradient_from_record(const MaskedNet& net, const Dataset& data, const ForwardRecord& record) {
  require_compatible(net, data);
  const std::size_t K = net.K(), m = net.m(), n = data.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Activation& act = net.activation();

  // Per (neuron, sample) weights l'_{j,i} sigma'(.) / n of the noise and signal directions.
  RowMatrix noise_coef = act.derivatives(record.noise_pre);
  RowMatrix signal_coef = act.derivatives(record.signal_pre);
  for (std::size_t j = 0; j < K; ++j) {
    const auto scale = (record.lprime.row(static_cast<Index>(j)) * inv_n).array();
    noise_coef.middleRows(static_cast<Index>(j * m), static_cast<Index>(m)).array().rowwise() *= scale;
    signal_coef.middleRows(static_cast<Index>(j * m), static_cast<Index>(m)).array().rowwise() *= scale;
  }
  RowMatrix grad = noise_coef * data.noise();
  Eigen::MatrixXd by_class = Eigen::MatrixXd::Zero(static_cast<Index>(K * m), static_cast<Index>(K));
  for (std::size_t i = 0; i < n; ++i) {
    by_class.col(static_cast<Index>(data.label(i))) += signal_coef.col(static_cast<Index>(i));
  }
  grad.leftCols(static_cast<Index>(K)) += data.mu() * by_class;
  grad.array() *= net.mask_matrix().array();
  return grad;
}

LossGrad loss_and_grad(const MaskedNet& net, const Dataset& data) {
  LossGrad out;
  out.record = forward(net, data);
  out.loss = out.record.loss;
  out.grad = gradient_from_record(net, data, out.record);
  return out;
}

EvalMetrics eval_metrics(const MaskedNet& net, const Dataset& data) {
  const ForwardRecord rec = forward(net, data);
  return {rec.loss, rec.error_rate(data)};
}

BoundReport bound_ratio(double grad_sq_norm, double loss, const MaskedNet& net, const DataConfig& data_cfg) {
  BoundReport rep;
  rep.grad_sq_norm = grad_sq_norm;
  rep.loss = loss;
  const double q = static_cast<double>(net.activation().degree());
  const double noise_scale = data_cfg.sigma_n * data_cfg.sigma_n * net.mask().p() * static_cast<double>(net.d());
  rep.scale = static_cast<double>(net.K()) * std::pow(static_cast<double>(net.m()), 2.0 / q) *
              std::max(data_cfg.mu * data_cfg.mu, noise_scale);
  if (loss <= 0.0) {
    rep.degenerate = true;
    rep.ratio = 0.0;
  } else {
    rep.ratio = grad_sq_norm / (rep.scale * loss);
  }
  return rep;
}

BoundReport grad_norm_bound_check(const MaskedNet& net, const Dataset& data) {
  const LossGrad lg = loss_and_grad(net, data);
  return bound_ratio(lg.grad.squaredNorm(), lg.loss, net, data.config());
}

void save_checkpoint(const MaskedNet& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  detail::write_u64(out, net.K());
  detail::write_u64(out, net.m());
  detail::write_u64(out, net.d());
  detail::write_i64(out, net.activation().tag());
  detail::write_f64(out, net.sigma0());
  detail::write_u64(out, net.iteration());
  const double* w = net.weights().data();
  for (Index idx = 0; idx < net.weights().size(); ++idx) detail::write_f64(out, w[idx]);
  if (!out) throw IoError("write failed: " + path.string());
}

MaskedNet load_checkpoint(const std::filesystem::path& path, const Mask& mask) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::uint64_t K = detail::read_u64(in);
  const std::uint64_t m = detail::read_u64(in);
  const std::uint64_t d = detail::read_u64(in);
  const Activation act = Activation::from_tag(detail::read_i64(in));
  const double sigma0 = detail::read_f64(in);
  const std::uint64_t iteration = detail::read_u64(in);
  if (K != mask.K() || m != mask.m() || d != mask.d()) {
    throw ConfigError("checkpoint shape does not match the mask: " + path.string());
  }
  RowMatrix w(static_cast<Index>(K * m), static_cast<Index>(d));
  double* dst = w.data();
  for (Index idx = 0; idx < w.size(); ++idx) dst[idx] = detail::read_f64(in);
  if (!in) throw IoError("checkpoint truncated: " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint has trailing bytes: " + path.string());
  const auto bits = mask.bits();
  for (std::size_t idx = 0; idx < bits.size(); ++idx) {
    if (bits[idx] == 0 && dst[idx] != 0.0) throw ConfigError("checkpoint has weight on a pruned coordinate");
  }
  return MaskedNet(mask, std::move(w), act, sigma0, iteration);
}

}  // namespace prunelab
