#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "dsrdm/carrier.hpp"
#include "dsrdm/schedule.hpp"
#include "dsrdm/tensor.hpp"

namespace dsrdm {

/// Noise predictor eps_theta(x_t, t). Implementations are read-only after
/// construction and safe to call concurrently.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Tensor predict(const Tensor& x_t, int t) const = 0;
};

/// Inverts the forward equation against a known carrier. With a per-step
/// map the carrier may differ between steps (matched embeddings rescale it).
class OraclePredictor final : public Predictor {
 public:
  OraclePredictor(Tensor x0, NoiseSchedule sched);
  OraclePredictor(std::map<int, Tensor> carriers_by_step, NoiseSchedule sched);

  Tensor predict(const Tensor& x_t, int t) const override;

 private:
  const Tensor& carrier_for(int t) const;

  Tensor x0_;
  std::map<int, Tensor> by_step_;
  NoiseSchedule sched_;
};

inline OraclePredictor oracle_predictor(const Tensor& x0, const NoiseSchedule& sched) {
  return OraclePredictor(x0, sched);
}

/// Sinusoidal embedding [sin(t f_k), cos(t f_k)], f_k = 10000^(-k/(dim/2)).
Eigen::VectorXd timestep_embedding(int t, int dim);

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct TrainConfig {
  std::vector<int> hidden{256, 256};
  int embed_dim = 32;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double grad_clip = 1.0;  // global L2 norm
  int batch_size = 32;
  int steps = 3000;
  std::uint64_t seed = 1;
};

/// Fully connected eps-predictor on flattened carriers. Input is
/// [x_t ; embedding(t)], hidden layers use SiLU, the output is linear.
/// Inputs are clamped to +-1e6 before the first layer.
class MlpPredictor final : public Predictor {
 public:
  MlpPredictor(std::size_t input_size, const std::vector<int>& hidden, int embed_dim,
               std::uint64_t schedule_fingerprint, std::uint64_t seed);
  MlpPredictor(std::vector<DenseLayer> layers, std::uint64_t schedule_fingerprint);

  Tensor predict(const Tensor& x_t, int t) const override;

  /// Column-per-sample batch forward pass.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, std::span<const int> steps) const;

  /// Mean squared error over batch and elements; fills `grad` (same layout
  /// as parameters()) when non-null.
  double loss_and_gradient(const Eigen::MatrixXd& x, std::span<const int> steps,
                           const Eigen::MatrixXd& eps, Eigen::VectorXd* grad) const;

  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& p);
  std::size_t parameter_count() const;

  std::size_t input_size() const noexcept { return input_size_; }
  int embed_dim() const noexcept { return embed_dim_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::uint64_t schedule_fingerprint() const noexcept { return fingerprint_; }

 private:
  Eigen::MatrixXd input_matrix(const Eigen::MatrixXd& x, std::span<const int> steps) const;

  std::size_t input_size_ = 0;
  int embed_dim_ = 0;
  std::vector<DenseLayer> layers_;
  std::uint64_t fingerprint_ = 0;
};

struct TrainResult {
  MlpPredictor predictor;
  std::vector<double> loss_trace;  // one entry per optimizer step
};

/// Momentum SGD on E ||eps - eps_theta(x_t, t)||^2 with t ~ U{1..T}.
/// Throws Error (config echoed) if the loss becomes non-finite.
TrainResult train_mlp(std::span<const Carrier> dataset, const TrainConfig& cfg,
                      const NoiseSchedule& sched);

/// Held-out MSE of `pred` on fresh (x_t, eps) pairs at the given steps.
double heldout_mse(const Predictor& pred, std::span<const Carrier> dataset,
                   const NoiseSchedule& sched, std::span<const int> steps, int samples_per_step,
                   std::uint64_t seed);

// Checkpoint layout (little-endian):
//   "DSRD" | u32 version | u32 layer count |
//   per layer: u32 rows | u32 cols | rows*cols f64, row-major [W | b] |
//   u64 schedule fingerprint
// cols = fan_in + 1; the embedding width is first cols - 1 - last rows.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const MlpPredictor& pred, const std::filesystem::path& path);

/// When `expected_fingerprint` is given and differs, throws
/// FingerprintMismatch unless `allow_mismatch`, in which case a warning is
/// printed to stderr and the predictor is returned.
MlpPredictor load_checkpoint(const std::filesystem::path& path,
                             std::optional<std::uint64_t> expected_fingerprint = std::nullopt,
                             bool allow_mismatch = false);

}  // namespace dsrdm
