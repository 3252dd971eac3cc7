#include "dsrdm/denoiser.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

namespace dsrdm {

OraclePredictor::OraclePredictor(Tensor x0, NoiseSchedule sched)
    : x0_(std::move(x0)), sched_(std::move(sched)) {}

OraclePredictor::OraclePredictor(std::map<int, Tensor> carriers_by_step, NoiseSchedule sched)
    : by_step_(std::move(carriers_by_step)), sched_(std::move(sched)) {}

const Tensor& OraclePredictor::carrier_for(int t) const {
  if (by_step_.empty()) return x0_;
  const auto it = by_step_.find(t);
  if (it == by_step_.end())
    throw InvalidArgument("oracle predictor has no carrier for step " + std::to_string(t));
  return it->second;
}

Tensor OraclePredictor::predict(const Tensor& x_t, int t) const {
  if (t < 1 || t > sched_.steps())
    throw InvalidArgument("oracle predictor step " + std::to_string(t) + " out of range");
  const Tensor& x0 = carrier_for(t);
  require_same_shape(x_t, x0, "oracle predictor");
  const double ab = sched_.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  Tensor eps(x_t.shape());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (x_t[i] - a * x0[i]) / b;
  return eps;
}

Eigen::VectorXd timestep_embedding(int t, int dim) {
  Eigen::VectorXd e(dim);
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / std::max(half, 1));
    e(k) = std::sin(t * freq);
    e(half + k) = std::cos(t * freq);
  }
  return e;
}

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::MatrixXd silu(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

constexpr double kInputClamp = 1e6;

}  // namespace

MlpPredictor::MlpPredictor(std::size_t input_size, const std::vector<int>& hidden, int embed_dim,
                           std::uint64_t schedule_fingerprint, std::uint64_t seed)
    : input_size_(input_size), embed_dim_(embed_dim), fingerprint_(schedule_fingerprint) {
  if (input_size == 0) throw InvalidArgument("predictor input size must be positive");
  if (embed_dim < 0 || embed_dim % 2 != 0) throw InvalidArgument("embedding width must be even");
  Rng rng(seed);
  std::vector<Eigen::Index> widths{static_cast<Eigen::Index>(input_size) + embed_dim};
  for (int h : hidden) {
    if (h <= 0) throw InvalidArgument("hidden widths must be positive");
    widths.push_back(h);
  }
  widths.push_back(static_cast<Eigen::Index>(input_size));
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer{Eigen::MatrixXd(widths[l + 1], widths[l]), Eigen::VectorXd::Zero(widths[l + 1])};
    const double sd = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = sd * rng.normal();
    layers_.push_back(std::move(layer));
  }
}

MlpPredictor::MlpPredictor(std::vector<DenseLayer> layers, std::uint64_t schedule_fingerprint)
    : layers_(std::move(layers)), fingerprint_(schedule_fingerprint) {
  if (layers_.empty()) throw InvalidArgument("predictor needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].bias.size() != layers_[l].weight.rows())
      throw InvalidArgument("layer bias does not match its weight rows");
    if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows())
      throw InvalidArgument("layer " + std::to_string(l) + " input width does not match previous output");
  }
  input_size_ = static_cast<std::size_t>(layers_.back().weight.rows());
  const auto first_in = layers_.front().weight.cols();
  embed_dim_ = static_cast<int>(first_in - static_cast<Eigen::Index>(input_size_));
  if (embed_dim_ < 0 || embed_dim_ % 2 != 0)
    throw InvalidArgument("layer dimensions imply an invalid embedding width");
}

Eigen::MatrixXd MlpPredictor::input_matrix(const Eigen::MatrixXd& x, std::span<const int> steps) const {
  if (static_cast<std::size_t>(x.rows()) != input_size_)
    throw InvalidArgument("predictor expects " + std::to_string(input_size_) + " inputs, got " +
                          std::to_string(x.rows()));
  if (static_cast<std::size_t>(x.cols()) != steps.size())
    throw InvalidArgument("one step index is needed per batch column");
  Eigen::MatrixXd in(x.rows() + embed_dim_, x.cols());
  in.topRows(x.rows()) = x.cwiseMax(-kInputClamp).cwiseMin(kInputClamp);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    in.block(x.rows(), j, embed_dim_, 1) = timestep_embedding(steps[static_cast<std::size_t>(j)], embed_dim_);
  return in;
}

Eigen::MatrixXd MlpPredictor::forward(const Eigen::MatrixXd& x, std::span<const int> steps) const {
  Eigen::MatrixXd a = input_matrix(x, steps);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    a = (l + 1 < layers_.size()) ? silu(z) : std::move(z);
  }
  return a;
}

Tensor MlpPredictor::predict(const Tensor& x_t, int t) const {
  for (double v : x_t.values())
    if (!std::isfinite(v)) throw InvalidArgument("predictor input is not finite");
  const Eigen::Map<const Eigen::MatrixXd> x(x_t.values().data(), static_cast<Eigen::Index>(x_t.size()), 1);
  const int steps[1] = {t};
  const Eigen::MatrixXd y = forward(x, steps);
  return Tensor(x_t.shape(), std::vector<double>(y.data(), y.data() + y.size()));
}

double MlpPredictor::loss_and_gradient(const Eigen::MatrixXd& x, std::span<const int> steps,
                                       const Eigen::MatrixXd& eps, Eigen::VectorXd* grad) const {
  const std::size_t depth = layers_.size();
  std::vector<Eigen::MatrixXd> acts(depth + 1), pre(depth);
  acts[0] = input_matrix(x, steps);
  for (std::size_t l = 0; l < depth; ++l) {
    pre[l] = layers_[l].weight * acts[l];
    pre[l].colwise() += layers_[l].bias;
    acts[l + 1] = (l + 1 < depth) ? silu(pre[l]) : pre[l];
  }
  const Eigen::MatrixXd diff = acts[depth] - eps;
  const double denom = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / denom;
  if (!grad) return loss;

  grad->resize(static_cast<Eigen::Index>(parameter_count()));
  std::vector<Eigen::MatrixXd> dw(depth);
  std::vector<Eigen::VectorXd> db(depth);
  Eigen::MatrixXd delta = (2.0 / denom) * diff;
  for (std::size_t l = depth; l-- > 0;) {
    if (l + 1 < depth) delta = delta.cwiseProduct(silu_grad(pre[l]));
    dw[l] = delta * acts[l].transpose();
    db[l] = delta.rowwise().sum();
    if (l > 0) delta = layers_[l].weight.transpose() * delta;
  }
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < depth; ++l) {
    for (Eigen::Index r = 0; r < dw[l].rows(); ++r)
      for (Eigen::Index c = 0; c < dw[l].cols(); ++c) (*grad)(k++) = dw[l](r, c);
    for (Eigen::Index r = 0; r < db[l].size(); ++r) (*grad)(k++) = db[l](r);
  }
  return loss;
}

std::size_t MlpPredictor::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Eigen::VectorXd MlpPredictor::parameters() const {
  Eigen::VectorXd p(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index k = 0;
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) p(k++) = l.weight(r, c);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) p(k++) = l.bias(r);
  }
  return p;
}

void MlpPredictor::set_parameters(const Eigen::VectorXd& p) {
  if (static_cast<std::size_t>(p.size()) != parameter_count())
    throw InvalidArgument("parameter vector has the wrong length");
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = p(k++);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = p(k++);
  }
}

namespace {

std::string echo(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "hidden=";
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) os << (i ? "," : "") << cfg.hidden[i];
  os << " embed_dim=" << cfg.embed_dim << " lr=" << cfg.learning_rate << " momentum=" << cfg.momentum
     << " grad_clip=" << cfg.grad_clip << " batch=" << cfg.batch_size << " steps=" << cfg.steps
     << " seed=" << cfg.seed;
  return os.str();
}

}  // namespace

TrainResult train_mlp(std::span<const Carrier> dataset, const TrainConfig& cfg,
                      const NoiseSchedule& sched) {
  if (dataset.empty()) throw InvalidArgument("training set is empty");
  const std::size_t n = dataset.front().size();
  for (const auto& c : dataset)
    if (c.data.shape() != dataset.front().data.shape())
      throw InvalidArgument("training carriers must share one shape");
  if (cfg.batch_size < 1 || cfg.steps < 1 || !(cfg.learning_rate > 0.0))
    throw InvalidArgument("training config needs positive batch, steps and learning rate");

  MlpPredictor model(n, cfg.hidden, cfg.embed_dim, sched.fingerprint(), derive_seed(cfg.seed, 0));
  Rng rng(derive_seed(cfg.seed, 1));
  Eigen::VectorXd params = model.parameters();
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(params.size());
  Eigen::VectorXd grad;

  const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), batch);
  Eigen::MatrixXd eps(static_cast<Eigen::Index>(n), batch);
  std::vector<int> steps(static_cast<std::size_t>(batch));

  TrainResult result{model, {}};
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.steps));
  for (int it = 0; it < cfg.steps; ++it) {
    for (Eigen::Index j = 0; j < batch; ++j) {
      const auto& x0 = dataset[rng.bits() % dataset.size()].data;
      const int t = 1 + static_cast<int>(rng.bits() % static_cast<std::uint64_t>(sched.steps()));
      const double a = std::sqrt(sched.alpha_bar(t));
      const double b = std::sqrt(1.0 - sched.alpha_bar(t));
      steps[static_cast<std::size_t>(j)] = t;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = rng.normal();
        eps(static_cast<Eigen::Index>(i), j) = e;
        x(static_cast<Eigen::Index>(i), j) = a * x0[i] + b * e;
      }
    }
    const double loss = model.loss_and_gradient(x, steps, eps, &grad);
    if (!std::isfinite(loss) || !grad.allFinite())
      throw Error("training diverged at step " + std::to_string(it) + " (" + echo(cfg) + ")");
    const double norm = grad.norm();
    if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) grad *= cfg.grad_clip / norm;
    velocity = cfg.momentum * velocity - cfg.learning_rate * grad;
    params += velocity;
    model.set_parameters(params);
    result.loss_trace.push_back(loss);
  }
  result.predictor = std::move(model);
  return result;
}

double heldout_mse(const Predictor& pred, std::span<const Carrier> dataset, const NoiseSchedule& sched,
                   std::span<const int> steps, int samples_per_step, std::uint64_t seed) {
  if (dataset.empty() || steps.empty() || samples_per_step < 1)
    throw InvalidArgument("held-out evaluation needs data, steps and samples");
  Rng rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  for (int t : steps) {
    for (int s = 0; s < samples_per_step; ++s) {
      const auto& x0 = dataset[rng.bits() % dataset.size()].data;
      Tensor eps(x0.shape());
      for (auto& v : eps.values()) v = rng.normal();
      const Tensor xt = forward_sample(x0, eps, t, sched);
      const Tensor est = pred.predict(xt, t);
      for (std::size_t i = 0; i < est.size(); ++i) total += (est[i] - eps[i]) * (est[i] - eps[i]);
      count += est.size();
    }
  }
  return total / static_cast<double>(count);
}

namespace {

static_assert(std::endian::native == std::endian::little);

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (in.gcount() != static_cast<std::streamsize>(sizeof v))
    throw CheckpointError("checkpoint truncated: " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const MlpPredictor& pred, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write("DSRD", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(pred.layers().size()));
  for (const auto& l : pred.layers()) {
    const auto rows = static_cast<std::uint32_t>(l.weight.rows());
    const auto cols = static_cast<std::uint32_t>(l.weight.cols() + 1);
    put(out, rows);
    put(out, cols);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) put<double>(out, l.weight(r, c));
      put<double>(out, l.bias(r));
    }
  }
  put<std::uint64_t>(out, pred.schedule_fingerprint());
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

MlpPredictor load_checkpoint(const std::filesystem::path& path,
                             std::optional<std::uint64_t> expected_fingerprint, bool allow_mismatch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "DSRD", 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in, path);
  if (count == 0 || count > 64) throw CheckpointError("implausible layer count " + std::to_string(count));

  std::vector<DenseLayer> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    const auto rows = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    if (rows == 0 || cols < 2 || static_cast<std::uint64_t>(rows) * cols > (1ull << 28))
      throw CheckpointError("implausible layer dimensions in " + path.string());
    DenseLayer layer{Eigen::MatrixXd(rows, cols - 1), Eigen::VectorXd(rows)};
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c + 1 < cols; ++c) layer.weight(r, c) = get<double>(in, path);
      layer.bias(r) = get<double>(in, path);
    }
    layers.push_back(std::move(layer));
  }
  const auto fingerprint = get<std::uint64_t>(in, path);
  if (in.peek() != std::char_traits<char>::eof())
    throw CheckpointError("trailing bytes after checkpoint in " + path.string());

  MlpPredictor pred = [&] {
    try {
      return MlpPredictor(std::move(layers), fingerprint);
    } catch (const InvalidArgument& e) {
      throw CheckpointError(std::string("checkpoint dimension mismatch: ") + e.what());
    }
  }();
  if (expected_fingerprint && *expected_fingerprint != fingerprint) {
    if (!allow_mismatch) {
      throw FingerprintMismatch("checkpoint " + path.string() +
                                " was trained on a different noise schedule; pass an explicit "
                                "override to load it anyway");
    }
    std::cerr << "warning: checkpoint " << path.string()
              << " schedule fingerprint differs from the configured schedule\n";
  }
  return pred;
}

}  // namespace dsrdm
