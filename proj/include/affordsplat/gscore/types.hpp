#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/core/tensor.hpp"

namespace affordsplat::gscore {

using core::Shape;
using core::Tensor;

// One splat set: N Gaussians with centers, per-axis (log-space) scales, unit
// rotation quaternions (w,x,y,z), opacity and SH color coefficients.
struct GaussianObject {
  Tensor<float> centers;    // [N,3]
  Tensor<float> scales;     // [N,3], kept verbatim from file (log-space)
  Tensor<float> rotations;  // [N,4], unit norm, scalar part >= 0
  Tensor<float> opacity;    // [N,1]
  Tensor<float> color;      // [N,C_sh], C_sh >= 3
  std::string category;
  std::string id;

  std::int64_t count() const { return centers.rank() ? centers.dim(0) : 0; }

  void validate() const {
    const std::int64_t n = count();
    if (n < 1) throw DataError("GaussianObject must have N >= 1");
    if (centers.dim(1) != 3 || scales.dim(0) != n || scales.dim(1) != 3 ||
        rotations.dim(0) != n || rotations.dim(1) != 4 ||
        opacity.dim(0) != n || opacity.dim(1) != 1 || color.dim(0) != n ||
        color.dim(1) < 3)
      throw DataError("GaussianObject field shapes inconsistent");
    for (std::int64_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::int64_t j = 0; j < 4; ++j) {
        const double q = rotations.at(i, j);
        s += q * q;
      }
      if (std::abs(std::sqrt(s) - 1.0) > 1e-5)
        throw DataError("quaternion row " + std::to_string(i) +
                              " is not unit norm");
    }
  }
};

// The 10-dim structural slice: columns 0-2 centers, 3-5 scales (file-verbatim,
// i.e. log-space), 6-9 rotation quaternion. Rows >= n_real are zero padding.
struct GaussianStruct {
  Tensor<float> features;  // [N,10]
  std::int64_t n_real = 0;

  std::int64_t rows() const { return features.rank() ? features.dim(0) : 0; }
};

constexpr int kStructDim = 10;

// Annotated point cloud with a per-point affordance label map in [0,1].
struct PointCloudObject {
  Tensor<float> points;             // [N_PC,3]
  Tensor<float> affordance_scores;  // [N_PC]
  std::string category;
  std::string affordance;
  std::string id;

  std::int64_t count() const { return points.rank() ? points.dim(0) : 0; }

  void validate() const {
    const std::int64_t n = count();
    if (n < 1) throw DataError("PointCloudObject must have N_PC >= 1");
    if (points.dim(1) != 3 || affordance_scores.dim(0) != n)
      throw DataError("PointCloudObject field shapes inconsistent");
    for (std::int64_t i = 0; i < n; ++i) {
      const float s = affordance_scores[i];
      if (!(s >= 0.0f && s <= 1.0f))
        throw DataError("affordance score out of [0,1]");
    }
  }
};

// Adaptive batch: `down` holds every object FPS-downsampled to the batch
// minimum, `padded` zero-pads every object to the batch maximum.
struct BatchedGaussians {
  Tensor<float> down;     // [B, N_batchmin, 10]
  Tensor<float> padded;   // [B, N_batchmax, 10]
  Tensor<float> validity; // [B, N_batchmax], 1 for real rows
  std::vector<std::vector<std::int64_t>> down_indices;  // per object FPS picks
  std::vector<std::string> ids;
  std::vector<std::int64_t> n_real;

  std::int64_t batch() const { return down.rank() ? down.dim(0) : 0; }
  std::int64_t n_min() const { return down.rank() ? down.dim(1) : 0; }
  std::int64_t n_max() const { return padded.rank() ? padded.dim(1) : 0; }
};

// Per-Gaussian affordance scores in [0,1]; padded indices hold exact zeros.
struct AffordanceMask {
  Tensor<float> scores;  // [N]

  std::int64_t count() const { return scores.rank() ? scores.dim(0) : 0; }

  std::vector<std::uint8_t> binary_view(float threshold = 0.5f) const {
    std::vector<std::uint8_t> out((std::size_t)count());
    for (std::int64_t i = 0; i < count(); ++i)
      out[(std::size_t)i] = scores[i] >= threshold ? 1 : 0;
    return out;
  }
};

}  // namespace affordsplat::gscore
