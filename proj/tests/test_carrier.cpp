#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "dsrdm/carrier.hpp"
#include "dsrdm/errors.hpp"

using namespace dsrdm;

TEST_CASE("synthetic carriers stay in [-1, 1] and are seed-deterministic") {
  for (Pattern p : {Pattern::gradient, Pattern::checker, Pattern::gaussian_blob}) {
    for (int size : {8, 16, 32, 64}) {
      const Carrier a = synth_carrier(size, p, 3);
      CHECK(a.kind == CarrierKind::image);
      CHECK(a.data.shape() == Shape{static_cast<std::size_t>(size), static_cast<std::size_t>(size), 3});
      for (double v : a.data.values()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
      CHECK(synth_carrier(size, p, 3).data == a.data);
      CHECK_NOTHROW(validate(a));
    }
  }
  CHECK(synth_carrier(16, Pattern::gaussian_blob, 1).data != synth_carrier(16, Pattern::gaussian_blob, 2).data);
  CHECK_THROWS_AS(synth_carrier(12, Pattern::checker, 1), InvalidArgument);
  CHECK_THROWS_AS(parse_pattern("stripes"), InvalidArgument);
  CHECK(parse_pattern(to_string(Pattern::gaussian_blob)) == Pattern::gaussian_blob);
}

TEST_CASE("PPM round trip preserves 8-bit levels") {
  const Carrier a = synth_carrier(16, Pattern::checker, 9);
  const auto path = std::filesystem::temp_directory_path() / "dsrdm_test_carrier.ppm";
  save_ppm(a, path);
  const Carrier b = load_ppm(path);
  CHECK(b.data.shape() == a.data.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) <= 1.0 / 255.0 + 1e-12);
  // A second pass is lossless.
  save_ppm(b, path);
  CHECK(load_ppm(path).data == b.data);
  std::filesystem::remove(path);
  CHECK_THROWS(load_ppm(path));
}

TEST_CASE("latent codec is orthonormal with the default 8x reduction") {
  const Shape image{32, 32, 3};
  const Shape latent = default_latent_shape(image);
  CHECK(latent == Shape{8, 8, 6});
  const LatentCodec codec = build_codec(image, latent, 5);
  CHECK(codec.reduction_ratio() == doctest::Approx(8.0));
  CHECK(codec.orthonormality_error() < 1e-10);

  const Carrier img = synth_carrier(32, Pattern::gaussian_blob, 2);
  const Carrier lat = encode_latent(img, codec);
  CHECK(lat.kind == CarrierKind::latent);
  CHECK(lat.data.shape() == latent);
  // Projection onto orthonormal rows cannot increase the norm.
  double n_img = 0.0, n_lat = 0.0;
  for (double v : img.data.values()) n_img += v * v;
  for (double v : lat.data.values()) n_lat += v * v;
  CHECK(n_lat <= n_img + 1e-9);
  CHECK_THROWS_AS(build_codec(image, Shape{32, 32, 6}, 1), InvalidArgument);
}
