#include "dsrdm/carrier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dsrdm/errors.hpp"
#include "dsrdm/rng.hpp"

namespace dsrdm {

void validate(const Carrier& c) {
  if (c.data.size() % 2 != 0)
    throw InvalidArgument("carrier element count must be even to pack into complex samples");
  for (double v : c.data.values()) {
    if (!std::isfinite(v)) throw InvalidArgument("carrier holds non-finite values");
    if (c.kind == CarrierKind::image && (v < -1.0 || v > 1.0))
      throw InvalidArgument("image carrier values must lie in [-1, 1]");
  }
}

Pattern parse_pattern(const std::string& name) {
  if (name == "gradient") return Pattern::gradient;
  if (name == "checker") return Pattern::checker;
  if (name == "gaussian-blob" || name == "blob") return Pattern::gaussian_blob;
  throw InvalidArgument("unknown carrier pattern '" + name + "'");
}

std::string to_string(Pattern p) {
  switch (p) {
    case Pattern::gradient: return "gradient";
    case Pattern::checker: return "checker";
    case Pattern::gaussian_blob: return "gaussian-blob";
  }
  return "?";
}

bool is_supported_carrier_size(int size) {
  return size == 8 || size == 16 || size == 32 || size == 64;
}

Carrier synth_carrier(int size, Pattern pattern, std::uint64_t seed) {
  if (!is_supported_carrier_size(size))
    throw InvalidArgument("carrier size " + std::to_string(size) + " unsupported (8, 16, 32, 64)");
  const auto h = static_cast<std::size_t>(size);
  Carrier c{Tensor({h, h, 3}), CarrierKind::image,
            to_string(pattern) + "-" + std::to_string(size) + "-" + std::to_string(seed)};
  Rng rng(mix64(seed));

  switch (pattern) {
    case Pattern::gradient:
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < h; ++col)
          for (std::size_t ch = 0; ch < 3; ++ch)
            c.data[(r * h + col) * 3 + ch] = -1.0 + 2.0 * static_cast<double>(col) / (size - 1);
      break;
    case Pattern::checker: {
      const std::size_t cell = std::size_t{1} << (rng.bits() % 3);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < h; ++col) {
          const double v = ((r / cell + col / cell) % 2 == 0) ? 1.0 : -1.0;
          for (std::size_t ch = 0; ch < 3; ++ch) c.data[(r * h + col) * 3 + ch] = v;
        }
      break;
    }
    case Pattern::gaussian_blob: {
      const double cy = rng.uniform() * (size - 1);
      const double cx = rng.uniform() * (size - 1);
      const double width = (0.1 + 0.3 * rng.uniform()) * size;
      double amp[3];
      for (double& a : amp) a = 0.5 + 0.5 * rng.uniform();
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < h; ++col) {
          const double d2 = (r - cy) * (r - cy) + (col - cx) * (col - cx);
          const double g = std::exp(-d2 / (2.0 * width * width));
          for (std::size_t ch = 0; ch < 3; ++ch)
            c.data[(r * h + col) * 3 + ch] = -1.0 + 2.0 * amp[ch] * g;
        }
      break;
    }
  }
  return c;
}

Carrier load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open PPM file " + path.string());

  // Header tokens are whitespace separated; '#' starts a comment line.
  auto next_token = [&in]() {
    std::string tok;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!tok.empty()) break;
        continue;
      }
      tok += ch;
    }
    return tok;
  };
  if (next_token() != "P6") throw InvalidArgument("not a binary PPM (P6) file: " + path.string());
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw InvalidArgument("malformed PPM header in " + path.string());
  }
  if (maxval != 255) throw InvalidArgument("only 8-bit PPM files are supported");
  if (w != h) throw InvalidArgument("PPM carrier must be square");
  if (!is_supported_carrier_size(w))
    throw InvalidArgument("PPM side " + std::to_string(w) + " unsupported (8, 16, 32, 64)");

  const auto side = static_cast<std::size_t>(w);
  std::vector<unsigned char> bytes(side * side * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw InvalidArgument("PPM pixel data truncated in " + path.string());

  Carrier c{Tensor({side, side, 3}), CarrierKind::image, path.filename().string()};
  for (std::size_t i = 0; i < bytes.size(); ++i) c.data[i] = bytes[i] / 127.5 - 1.0;
  return c;
}

void save_ppm(const Carrier& image, const std::filesystem::path& path) {
  const auto& shape = image.data.shape();
  if (image.kind != CarrierKind::image || shape.size() != 3 || shape[2] != 3)
    throw InvalidArgument("only H x W x 3 image carriers can be written as PPM");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << "P6\n" << shape[1] << ' ' << shape[0] << "\n255\n";
  for (double v : image.data.values()) {
    const double clipped = std::clamp(v, -1.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround((clipped + 1.0) * 127.5))));
  }
}

LatentCodec::LatentCodec(Shape image_shape, Shape latent_shape, Eigen::MatrixXd projection)
    : image_shape_(std::move(image_shape)),
      latent_shape_(std::move(latent_shape)),
      projection_(std::move(projection)) {
  if (static_cast<std::size_t>(projection_.rows()) != element_count(latent_shape_) ||
      static_cast<std::size_t>(projection_.cols()) != element_count(image_shape_))
    throw InvalidArgument("projection dimensions do not match the codec shapes");
  if (orthonormality_error() > 1e-10)
    throw InvalidArgument("latent projection rows are not orthonormal");
}

double LatentCodec::orthonormality_error() const {
  const Eigen::MatrixXd gram = projection_ * projection_.transpose();
  return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

LatentCodec build_codec(const Shape& image_shape, const Shape& latent_shape, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(element_count(image_shape));
  const auto k = static_cast<Eigen::Index>(element_count(latent_shape));
  if (k < 1 || k > n)
    throw InvalidArgument("latent shape " + shape_string(latent_shape) +
                          " cannot be an orthonormal projection of " + shape_string(image_shape));
  Rng rng(seed);
  Eigen::MatrixXd g(n, k);
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);
  return LatentCodec(image_shape, latent_shape, q.transpose());
}

Shape default_latent_shape(const Shape& image_shape, std::size_t channels) {
  if (image_shape.size() != 3) throw InvalidArgument("image shape must be H x W x C");
  return {image_shape[0] / 4, image_shape[1] / 4, channels};
}

Carrier encode_latent(const Carrier& image, const LatentCodec& codec) {
  if (image.kind != CarrierKind::image) throw InvalidArgument("encode_latent expects an image carrier");
  if (image.data.shape() != codec.image_shape())
    throw InvalidArgument("image shape " + shape_string(image.data.shape()) +
                          " does not match codec input " + shape_string(codec.image_shape()));
  const Eigen::Map<const Eigen::VectorXd> x(image.data.values().data(),
                                            static_cast<Eigen::Index>(image.size()));
  const Eigen::VectorXd z = codec.projection() * x;
  return Carrier{Tensor(codec.latent_shape(), std::vector<double>(z.data(), z.data() + z.size())),
                 CarrierKind::latent, image.id + "-latent"};
}

}  // namespace dsrdm
