#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>

#include "dsrdm/tensor.hpp"

namespace dsrdm {

enum class CarrierKind { image, latent };

/// The medium the information signal rides on. Images are H x H x 3 in
/// [-1, 1]; latents are h x w x c with finite values.
struct Carrier {
  Tensor data;
  CarrierKind kind = CarrierKind::image;
  std::string id;

  std::size_t size() const noexcept { return data.size(); }
  /// Complex channel uses needed to send one carrier-shaped tensor.
  std::size_t channel_uses() const noexcept { return data.size() / 2; }
};

/// Throws InvalidArgument if the carrier breaks its kind's invariants.
void validate(const Carrier& c);

enum class Pattern { gradient, checker, gaussian_blob };

Pattern parse_pattern(const std::string& name);
std::string to_string(Pattern p);

bool is_supported_carrier_size(int size);

/// Deterministic procedural image. `gradient` spans [-1, 1] along each row
/// and ignores the seed; `checker` draws its cell size from the seed;
/// `gaussian_blob` draws centre, width and per-channel amplitude.
Carrier synth_carrier(int size, Pattern pattern, std::uint64_t seed);

/// Binary P6, 8-bit, square. Bytes map linearly onto [-1, 1].
Carrier load_ppm(const std::filesystem::path& path);
/// Writes "P6\n<w> <h>\n255\n" then RGB bytes; values are clipped to [-1, 1].
void save_ppm(const Carrier& image, const std::filesystem::path& path);

/// Fixed orthonormal analysis operator standing in for a latent encoder.
class LatentCodec {
 public:
  LatentCodec(Shape image_shape, Shape latent_shape, Eigen::MatrixXd projection);

  const Shape& image_shape() const noexcept { return image_shape_; }
  const Shape& latent_shape() const noexcept { return latent_shape_; }
  const Eigen::MatrixXd& projection() const noexcept { return projection_; }
  double reduction_ratio() const noexcept {
    return static_cast<double>(element_count(image_shape_)) / element_count(latent_shape_);
  }
  /// max |P P^T - I|.
  double orthonormality_error() const;

 private:
  Shape image_shape_;
  Shape latent_shape_;
  Eigen::MatrixXd projection_;  // latent_count x image_count
};

/// Orthogonalizes a seeded Gaussian matrix (Householder QR).
LatentCodec build_codec(const Shape& image_shape, const Shape& latent_shape, std::uint64_t seed);

/// Default latent shape: (H/4) x (H/4) x 6.
Shape default_latent_shape(const Shape& image_shape, std::size_t channels = 6);

Carrier encode_latent(const Carrier& image, const LatentCodec& codec);

}  // namespace dsrdm
