#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/core/rng.hpp"
#include "affordsplat/gscore/types.hpp"

namespace affordsplat::gscore {

// Copies the structural columns out of a GaussianObject. Opacity and color
// are dropped.
inline GaussianStruct extract_struct(const GaussianObject& g) {
  g.validate();
  const std::int64_t n = g.count();
  GaussianStruct s;
  s.features = Tensor<float>({n, kStructDim});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < 3; ++j) {
      s.features.at(i, j) = g.centers.at(i, j);
      s.features.at(i, 3 + j) = g.scales.at(i, j);
    }
    for (std::int64_t j = 0; j < 4; ++j)
      s.features.at(i, 6 + j) = g.rotations.at(i, j);
  }
  s.n_real = n;
  return s;
}

template <typename S>
inline S sq_dist3(const S* a, const S* b) {
  const S dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Farthest-point sampling. The first pick is seed % N; every later pick
// maximizes the minimum squared distance to the selected set, ties broken by
// the lowest index. Deterministic given (positions, n, seed).
template <typename S>
std::vector<std::int64_t> fps_downsample(const Tensor<S>& positions,
                                         std::int64_t n, std::uint64_t seed) {
  if (positions.rank() != 2 || positions.dim(1) != 3)
    throw ArgumentError("fps_downsample expects [N,3] positions");
  const std::int64_t N = positions.dim(0);
  if (n < 1 || n > N)
    throw ArgumentError("fps_downsample needs 1 <= n <= N");
  std::vector<std::int64_t> picks;
  picks.reserve((std::size_t)n);
  std::vector<S> min_d((std::size_t)N, std::numeric_limits<S>::max());
  std::int64_t cur = static_cast<std::int64_t>(seed % (std::uint64_t)N);
  picks.push_back(cur);
  for (std::int64_t step = 1; step < n; ++step) {
    const S* p = positions.data() + cur * 3;
    std::int64_t best = -1;
    S best_d = -1;
    for (std::int64_t i = 0; i < N; ++i) {
      const S d = sq_dist3(positions.data() + i * 3, p);
      if (d < min_d[(std::size_t)i]) min_d[(std::size_t)i] = d;
      if (min_d[(std::size_t)i] > best_d) {
        best_d = min_d[(std::size_t)i];
        best = i;
      }
    }
    picks.push_back(best);
    cur = best;
  }
  return picks;
}

// FPS variant whose first pick depends only on the point set geometry (the
// point farthest from the centroid), so the selected set is stable under row
// permutations.
template <typename S>
std::vector<std::int64_t> fps_geometric(const Tensor<S>& positions,
                                        std::int64_t n) {
  if (positions.rank() != 2 || positions.dim(1) != 3)
    throw ArgumentError("fps_geometric expects [N,3] positions");
  const std::int64_t N = positions.dim(0);
  if (n < 1 || n > N)
    throw ArgumentError("fps_geometric needs 1 <= n <= N");
  S c[3] = {0, 0, 0};
  for (std::int64_t i = 0; i < N; ++i)
    for (int j = 0; j < 3; ++j) c[j] += positions.at(i, j);
  for (int j = 0; j < 3; ++j) c[j] /= S(N);
  std::int64_t start = 0;
  S best = -1;
  for (std::int64_t i = 0; i < N; ++i) {
    const S d = sq_dist3(positions.data() + i * 3, c);
    if (d > best) {
      best = d;
      start = i;
    }
  }
  std::vector<std::int64_t> picks;
  picks.reserve((std::size_t)n);
  std::vector<S> min_d((std::size_t)N, std::numeric_limits<S>::max());
  std::int64_t cur = start;
  picks.push_back(cur);
  for (std::int64_t step = 1; step < n; ++step) {
    const S* p = positions.data() + cur * 3;
    std::int64_t bi = -1;
    S bd = -1;
    for (std::int64_t i = 0; i < N; ++i) {
      const S d = sq_dist3(positions.data() + i * 3, p);
      if (d < min_d[(std::size_t)i]) min_d[(std::size_t)i] = d;
      if (min_d[(std::size_t)i] > bd) {
        bd = min_d[(std::size_t)i];
        bi = i;
      }
    }
    picks.push_back(bi);
    cur = bi;
  }
  return picks;
}

// k nearest source rows for each destination position, ties broken by index.
template <typename S>
void knn(const Tensor<S>& src_pos, const Tensor<S>& dst_pos, std::int64_t k,
         Tensor<std::int64_t>& idx, Tensor<S>& dist) {
  const std::int64_t M = src_pos.dim(0), N = dst_pos.dim(0);
  if (k < 1 || k > M) throw ArgumentError("knn needs 1 <= k <= M");
  idx = Tensor<std::int64_t>({N, k});
  dist = Tensor<S>({N, k});
  std::vector<std::pair<S, std::int64_t>> cand((std::size_t)M);
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t j = 0; j < M; ++j)
      cand[(std::size_t)j] = {sq_dist3(src_pos.data() + j * 3,
                                       dst_pos.data() + i * 3),
                              j};
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (std::int64_t j = 0; j < k; ++j) {
      idx.at(i, j) = cand[(std::size_t)j].second;
      dist.at(i, j) = std::sqrt(cand[(std::size_t)j].first);
    }
  }
}

struct IdwPlan {
  Tensor<std::int64_t> idx;  // [N,k]
  Tensor<float> weights;     // [N,k], normalized per row
};

// Inverse-distance weights: w ~ 1/(dist^power + eps), normalized to sum 1.
template <typename S>
IdwPlan idw_plan(const Tensor<S>& src_pos, const Tensor<S>& dst_pos,
                 std::int64_t k, double power, double eps = 1e-8) {
  Tensor<std::int64_t> idx;
  Tensor<S> dist;
  knn(src_pos, dst_pos, k, idx, dist);
  const std::int64_t N = dst_pos.dim(0);
  IdwPlan plan;
  plan.idx = idx;
  plan.weights = Tensor<float>({N, k});
  for (std::int64_t i = 0; i < N; ++i) {
    double sum = 0;
    std::vector<double> w((std::size_t)k);
    for (std::int64_t j = 0; j < k; ++j) {
      const double d = static_cast<double>(dist.at(i, j));
      w[(std::size_t)j] = 1.0 / (std::pow(d, power) + eps);
      sum += w[(std::size_t)j];
    }
    for (std::int64_t j = 0; j < k; ++j)
      plan.weights.at(i, j) = static_cast<float>(w[(std::size_t)j] / sum);
  }
  return plan;
}

// Direct IDW feature interpolation (outside any autodiff graph).
template <typename S>
Tensor<S> idw_interpolate(const Tensor<S>& src_pos, const Tensor<S>& src_feat,
                          const Tensor<S>& dst_pos, std::int64_t k,
                          double power, double eps = 1e-8) {
  if (src_pos.dim(0) != src_feat.dim(0))
    throw ArgumentError("idw_interpolate src size mismatch");
  IdwPlan plan = idw_plan(src_pos, dst_pos, k, power, eps);
  const std::int64_t N = dst_pos.dim(0), d = src_feat.dim(1);
  Tensor<S> out({N, d});
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t j = 0; j < k; ++j) {
      const S w = static_cast<S>(plan.weights.at(i, j));
      const S* row = src_feat.data() + plan.idx.at(i, j) * d;
      for (std::int64_t t = 0; t < d; ++t) out.at(i, t) += w * row[t];
    }
  return out;
}

// Symmetric squared-distance Chamfer: mean over a of the squared distance to
// the nearest b, plus the same with roles swapped. Accumulated in double.
template <typename S>
double chamfer_distance(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || a.dim(1) != 3 || b.rank() != 2 || b.dim(1) != 3)
    throw ArgumentError("chamfer_distance expects [N,3] point sets");
  const std::int64_t Na = a.dim(0), Nb = b.dim(0);
  if (Na < 1 || Nb < 1)
    throw ArgumentError("chamfer_distance needs non-empty sets");
  auto sqd = [](const S* p, const S* q) {
    const double dx = (double)p[0] - (double)q[0];
    const double dy = (double)p[1] - (double)q[1];
    const double dz = (double)p[2] - (double)q[2];
    return dx * dx + dy * dy + dz * dz;
  };
  double sum_a = 0;
  for (std::int64_t i = 0; i < Na; ++i) {
    double best = std::numeric_limits<double>::max();
    for (std::int64_t j = 0; j < Nb; ++j)
      best = std::min(best, sqd(a.data() + i * 3, b.data() + j * 3));
    sum_a += best;
  }
  double sum_b = 0;
  for (std::int64_t j = 0; j < Nb; ++j) {
    double best = std::numeric_limits<double>::max();
    for (std::int64_t i = 0; i < Na; ++i)
      best = std::min(best, sqd(a.data() + i * 3, b.data() + j * 3));
    sum_b += best;
  }
  return sum_a / (double)Na + sum_b / (double)Nb;
}

// Assembles the adaptive batch: `down` via FPS on centers to the batch
// minimum, `padded` zero-filled to the batch maximum.
inline BatchedGaussians make_batch(const std::vector<GaussianStruct>& objects,
                                   std::uint64_t seed) {
  if (objects.empty()) throw ArgumentError("make_batch on empty list");
  const std::int64_t B = (std::int64_t)objects.size();
  std::int64_t n_min = std::numeric_limits<std::int64_t>::max(), n_max = 0;
  for (const auto& o : objects) {
    if (o.n_real < 1 || o.rows() < o.n_real)
      throw ArgumentError("make_batch: invalid GaussianStruct");
    n_min = std::min(n_min, o.n_real);
    n_max = std::max(n_max, o.n_real);
  }
  BatchedGaussians out;
  out.down = Tensor<float>({B, n_min, kStructDim});
  out.padded = Tensor<float>({B, n_max, kStructDim});
  out.validity = Tensor<float>({B, n_max});
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& o = objects[(std::size_t)b];
    Tensor<float> centers({o.n_real, 3});
    for (std::int64_t i = 0; i < o.n_real; ++i)
      for (std::int64_t j = 0; j < 3; ++j)
        centers.at(i, j) = o.features.at(i, j);
    // Slot-independent substream: identical objects in different batch
    // slots must receive identical downsamples.
    auto picks =
        fps_downsample(centers, n_min, core::substream_seed(seed, "batch.fps"));
    for (std::int64_t i = 0; i < n_min; ++i)
      for (std::int64_t j = 0; j < kStructDim; ++j)
        out.down.at(b, i, j) = o.features.at(picks[(std::size_t)i], j);
    for (std::int64_t i = 0; i < o.n_real; ++i) {
      for (std::int64_t j = 0; j < kStructDim; ++j)
        out.padded.at(b, i, j) = o.features.at(i, j);
      out.validity.at(b, i) = 1.0f;
    }
    out.down_indices.push_back(std::move(picks));
    out.n_real.push_back(o.n_real);
    out.ids.push_back("");
  }
  return out;
}

}  // namespace affordsplat::gscore
