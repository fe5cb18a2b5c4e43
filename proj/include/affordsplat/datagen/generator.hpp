#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/core/rng.hpp"
#include "affordsplat/gscore/types.hpp"

namespace affordsplat::datagen {

using core::Rng;
using gscore::AffordanceMask;
using gscore::GaussianObject;
using gscore::PointCloudObject;
using gscore::Tensor;

struct AffordanceDef {
  std::string name;
  std::vector<std::string> parts;  // geometric region predicate: part names
};

struct SyntheticSpec {
  std::string category;
  std::vector<AffordanceDef> affordances;
  std::pair<std::int64_t, std::int64_t> n_gaussians_range{256, 512};
  std::int64_t n_points = 2048;
  double jitter = 0.02;
};

namespace detail {

struct Part {
  std::string name;
  double weight;  // relative surface area
  std::function<void(Rng&, float*)> sample;
};

inline void rotate_y(float* p, double ang) {
  const double c = std::cos(ang), s = std::sin(ang);
  const double x = p[0], z = p[2];
  p[0] = (float)(c * x + s * z);
  p[2] = (float)(-s * x + c * z);
}

// Part builders. Dimensions are drawn once per object from dims_rng so the
// Gaussian samples and every paired point cloud share the same shape.
inline std::vector<Part> build_parts(const std::string& category,
                                     Rng& dims_rng) {
  auto jit = [&](double base, double rel = 0.12) {
    return base * std::exp(dims_rng.normal(0.0, rel));
  };
  std::vector<Part> parts;
  auto add = [&](std::string name, double weight,
                 std::function<void(Rng&, float*)> fn) {
    parts.push_back({std::move(name), weight, std::move(fn)});
  };

  if (category == "mug") {
    const double R = jit(0.40), H = jit(0.80);
    const double rim_h = 0.06 * H;
    add("body", 2 * M_PI * R * (H - rim_h) + M_PI * R * R,
        [=](Rng& r, float* p) {
          if (r.uniform() < (M_PI * R * R) / (2 * M_PI * R * (H - rim_h) + M_PI * R * R)) {
            const double rr = R * std::sqrt(r.uniform()), th = r.uniform(0, 2 * M_PI);
            p[0] = (float)(rr * std::cos(th));
            p[1] = (float)(rr * std::sin(th));
            p[2] = 0.0f;
          } else {
            const double th = r.uniform(0, 2 * M_PI);
            p[0] = (float)(R * std::cos(th));
            p[1] = (float)(R * std::sin(th));
            p[2] = (float)r.uniform(0, H - rim_h);
          }
        });
    add("rim", 2 * M_PI * R * rim_h, [=](Rng& r, float* p) {
      const double th = r.uniform(0, 2 * M_PI);
      p[0] = (float)(R * std::cos(th));
      p[1] = (float)(R * std::sin(th));
      p[2] = (float)r.uniform(H - rim_h, H);
    });
    const double Rm = jit(0.28), rm = jit(0.08);
    add("handle", 4 * M_PI * M_PI * Rm * rm * 0.5, [=](Rng& r, float* p) {
      const double u = r.uniform(-M_PI / 2, M_PI / 2);  // half torus
      const double v = r.uniform(0, 2 * M_PI);
      const double ring = Rm + rm * std::cos(v);
      p[0] = (float)(R + ring * std::cos(u) - 0.05);
      p[1] = (float)(rm * std::sin(v));
      p[2] = (float)(H / 2 + ring * std::sin(u));
    });
  } else if (category == "bag") {
    const double W = jit(0.7), D = jit(0.35), H = jit(0.6);
    add("body", 2 * (W + D) * H + W * D, [=](Rng& r, float* p) {
      const double side_area = 2 * (W + D) * H;
      if (r.uniform() < side_area / (side_area + W * D)) {
        const double u = r.uniform(0, 2 * (W + D));
        p[2] = (float)r.uniform(0, H);
        if (u < W) {
          p[0] = (float)(u - W / 2);
          p[1] = (float)(-D / 2);
        } else if (u < W + D) {
          p[0] = (float)(W / 2);
          p[1] = (float)(u - W - D / 2);
        } else if (u < 2 * W + D) {
          p[0] = (float)(u - W - D - W / 2);
          p[1] = (float)(D / 2);
        } else {
          p[0] = (float)(-W / 2);
          p[1] = (float)(u - 2 * W - D - D / 2);
        }
      } else {
        p[0] = (float)r.uniform(-W / 2, W / 2);
        p[1] = (float)r.uniform(-D / 2, D / 2);
        p[2] = 0.0f;
      }
    });
    add("toprim", 2 * (W + D) * 0.05, [=](Rng& r, float* p) {
      const double u = r.uniform(0, 2 * (W + D));
      p[2] = (float)H;
      if (u < W) {
        p[0] = (float)(u - W / 2);
        p[1] = (float)(-D / 2);
      } else if (u < W + D) {
        p[0] = (float)(W / 2);
        p[1] = (float)(u - W - D / 2);
      } else if (u < 2 * W + D) {
        p[0] = (float)(u - W - D - W / 2);
        p[1] = (float)(D / 2);
      } else {
        p[0] = (float)(-W / 2);
        p[1] = (float)(u - 2 * W - D - D / 2);
      }
    });
    const double Rh = jit(0.22), rh = jit(0.03);
    add("handle", M_PI * M_PI * Rh * rh * 2, [=](Rng& r, float* p) {
      const double u = r.uniform(0, M_PI);  // upper half arc
      const double v = r.uniform(0, 2 * M_PI);
      const double ring = Rh + rh * std::cos(v);
      p[0] = (float)(ring * std::cos(u));
      p[1] = (float)(rh * std::sin(v));
      p[2] = (float)(H + ring * std::sin(u));
    });
  } else if (category == "knife") {
    const double BL = jit(0.8), BH = jit(0.18), HL = jit(0.35), HR = jit(0.045);
    add("blade", 2 * BL * BH, [=](Rng& r, float* p) {
      p[0] = (float)r.uniform(0, BL);
      p[1] = (float)(r.uniform() < 0.5 ? -0.006 : 0.006);
      p[2] = (float)r.uniform(0.035 * BH, BH);
    });
    add("edge", BL * 0.05, [=](Rng& r, float* p) {
      p[0] = (float)r.uniform(0, BL * 0.93);
      p[1] = 0.0f;
      p[2] = (float)r.uniform(0, 0.03 * BH);
    });
    add("tip", 0.06 * BH, [=](Rng& r, float* p) {
      p[0] = (float)(BL * r.uniform(0.94, 1.0));
      p[1] = 0.0f;
      p[2] = (float)(BH * r.uniform(0, 0.35) * (1.0 - (p[0] / BL - 0.94) / 0.06));
    });
    add("handle", 2 * M_PI * HR * HL, [=](Rng& r, float* p) {
      const double th = r.uniform(0, 2 * M_PI);
      p[0] = (float)r.uniform(-HL, 0);
      p[1] = (float)(HR * std::cos(th));
      p[2] = (float)(BH / 2 + HR * std::sin(th));
    });
  } else if (category == "door") {
    const double W = jit(0.9), H = jit(2.0), T = 0.05;
    add("panel", 2 * W * H, [=](Rng& r, float* p) {
      p[0] = (float)r.uniform(0, W);
      p[1] = (float)(r.uniform() < 0.5 ? 0.0 : T);
      p[2] = (float)r.uniform(0, H);
    });
    const double KR = jit(0.045);
    add("knob", 4 * M_PI * KR * KR, [=](Rng& r, float* p) {
      const double u = r.uniform(0, 2 * M_PI), c = r.uniform(-1, 1);
      const double s = std::sqrt(1 - c * c);
      p[0] = (float)(W * 0.9 + KR * s * std::cos(u));
      p[1] = (float)(-0.06 + KR * s * std::sin(u));
      p[2] = (float)(H * 0.5 + KR * c);
    });
  } else if (category == "bottle") {
    const double R = jit(0.28), H = jit(0.72), NR = jit(0.10), NH = jit(0.26);
    add("body", 2 * M_PI * R * H + M_PI * R * R, [=](Rng& r, float* p) {
      if (r.uniform() < (M_PI * R * R) / (2 * M_PI * R * H + M_PI * R * R)) {
        const double rr = R * std::sqrt(r.uniform()), th = r.uniform(0, 2 * M_PI);
        p[0] = (float)(rr * std::cos(th));
        p[1] = (float)(rr * std::sin(th));
        p[2] = 0.0f;
      } else {
        const double th = r.uniform(0, 2 * M_PI);
        p[0] = (float)(R * std::cos(th));
        p[1] = (float)(R * std::sin(th));
        p[2] = (float)r.uniform(0, H);
      }
    });
    add("neck", 2 * M_PI * NR * NH * 0.7, [=](Rng& r, float* p) {
      const double th = r.uniform(0, 2 * M_PI);
      p[0] = (float)(NR * std::cos(th));
      p[1] = (float)(NR * std::sin(th));
      p[2] = (float)(H + r.uniform(0, NH * 0.7));
    });
    add("cap", 2 * M_PI * NR * NH * 0.3 + M_PI * NR * NR, [=](Rng& r, float* p) {
      if (r.uniform() < 0.4) {
        const double rr = NR * std::sqrt(r.uniform()), th = r.uniform(0, 2 * M_PI);
        p[0] = (float)(rr * std::cos(th));
        p[1] = (float)(rr * std::sin(th));
        p[2] = (float)(H + NH);
      } else {
        const double th = r.uniform(0, 2 * M_PI);
        p[0] = (float)(NR * std::cos(th));
        p[1] = (float)(NR * std::sin(th));
        p[2] = (float)(H + NH * r.uniform(0.7, 1.0));
      }
    });
  } else if (category == "bowl") {
    const double R = jit(0.5);
    auto hemi = [=](Rng& r, double r0, double r1, float* p) {
      const double z01 = r.uniform(r0, r1);  // normalized height band
      const double phi = std::acos(1 - z01);  // denser near rim
      const double th = r.uniform(0, 2 * M_PI);
      p[0] = (float)(R * std::sin(phi) * std::cos(th));
      p[1] = (float)(R * std::sin(phi) * std::sin(th));
      p[2] = (float)(R * (1 - std::cos(phi)));
    };
    add("interior", 2 * M_PI * R * R * 0.55,
        [=](Rng& r, float* p) { hemi(r, 0.05, 0.85, p); });
    add("rim", 2 * M_PI * R * R * 0.15,
        [=](Rng& r, float* p) { hemi(r, 0.85, 1.0, p); });
    add("exterior", 2 * M_PI * R * R * 1.02, [=](Rng& r, float* p) {
      hemi(r, 0.0, 1.0, p);
      const double len = std::sqrt((double)p[0] * p[0] + (double)p[1] * p[1]);
      if (len > 1e-9) {
        p[0] = (float)(p[0] * (1 + 0.04 / len * R));
        p[1] = (float)(p[1] * (1 + 0.04 / len * R));
      }
      p[2] -= 0.02f;
    });
  } else if (category == "chair") {
    const double W = jit(0.5), D = jit(0.5), SH = jit(0.45), BH = jit(0.55);
    add("seat", W * D, [=](Rng& r, float* p) {
      p[0] = (float)r.uniform(-W / 2, W / 2);
      p[1] = (float)r.uniform(-D / 2, D / 2);
      p[2] = (float)(SH + r.uniform(0, 0.04));
    });
    add("backrest", W * BH, [=](Rng& r, float* p) {
      p[0] = (float)r.uniform(-W / 2, W / 2);
      p[1] = (float)(-D / 2 + r.uniform(0, 0.04));
      p[2] = (float)(SH + r.uniform(0, BH));
    });
    add("legs", 4 * 4 * 0.04 * SH, [=](Rng& r, float* p) {
      const int leg = (int)r.uniform_int(4);
      const double lx = (leg % 2 ? 1 : -1) * (W / 2 - 0.04);
      const double ly = (leg / 2 ? 1 : -1) * (D / 2 - 0.04);
      const double th = r.uniform(0, 2 * M_PI);
      p[0] = (float)(lx + 0.025 * std::cos(th));
      p[1] = (float)(ly + 0.025 * std::sin(th));
      p[2] = (float)r.uniform(0, SH);
    });
  } else if (category == "hat") {
    const double R = jit(0.35), BR = jit(0.55);
    add("dome", 2 * M_PI * R * R, [=](Rng& r, float* p) {
      const double c = r.uniform(0, 1);
      const double s = std::sqrt(1 - c * c);
      const double th = r.uniform(0, 2 * M_PI);
      p[0] = (float)(R * s * std::cos(th));
      p[1] = (float)(R * s * std::sin(th));
      p[2] = (float)(R * c);
    });
    add("brim", M_PI * (BR * BR - R * R), [=](Rng& r, float* p) {
      const double rr = std::sqrt(r.uniform(R * R, BR * BR));
      const double th = r.uniform(0, 2 * M_PI);
      p[0] = (float)(rr * std::cos(th));
      p[1] = (float)(rr * std::sin(th));
      p[2] = 0.0f;
    });
  } else {
    throw ArgumentError("unknown synthetic category: " + category);
  }
  return parts;
}

// Proportional-to-weight allocation with every part getting at least one row.
inline std::vector<std::int64_t> allocate_counts(const std::vector<Part>& parts,
                                                 std::int64_t n) {
  const std::size_t P = parts.size();
  double total = 0;
  for (const auto& p : parts) total += p.weight;
  std::vector<std::int64_t> counts(P, 0);
  std::vector<std::pair<double, std::size_t>> fracs;
  std::int64_t used = 0;
  for (std::size_t i = 0; i < P; ++i) {
    const double exact = (double)n * parts[i].weight / total;
    counts[i] = (std::int64_t)std::floor(exact);
    used += counts[i];
    fracs.push_back({-(exact - (double)counts[i]), i});
  }
  std::sort(fracs.begin(), fracs.end());
  for (std::int64_t r = 0; r < n - used; ++r)
    counts[fracs[(std::size_t)r % P].second]++;
  for (std::size_t i = 0; i < P; ++i)
    if (counts[i] == 0) {
      std::size_t donor = 0;
      for (std::size_t j = 1; j < P; ++j)
        if (counts[j] > counts[donor]) donor = j;
      counts[donor]--;
      counts[i]++;
    }
  return counts;
}

inline void sample_labeled(const std::vector<Part>& parts, std::int64_t n,
                           double jitter, Rng& rng, Tensor<float>& points,
                           std::vector<int>& labels) {
  auto counts = allocate_counts(parts, n);
  points = Tensor<float>({n, 3});
  labels.assign((std::size_t)n, 0);
  std::int64_t row = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    for (std::int64_t c = 0; c < counts[pi]; ++c, ++row) {
      float p[3];
      parts[pi].sample(rng, p);
      for (int j = 0; j < 3; ++j)
        points.at(row, j) = p[j] + (float)rng.normal(0.0, jitter);
      labels[(std::size_t)row] = (int)pi;
    }
  }
}

inline int part_index(const std::vector<Part>& parts, const std::string& name) {
  for (std::size_t i = 0; i < parts.size(); ++i)
    if (parts[i].name == name) return (int)i;
  throw ArgumentError("affordance names unknown part: " + name);
}

}  // namespace detail

struct GeneratedObject {
  GaussianObject gaussian;
  std::vector<PointCloudObject> pointclouds;        // one per affordance
  std::map<std::string, AffordanceMask> masks;      // per affordance
};

// Deterministic synthetic object. Everything derives from (spec, seed) via
// named substreams, so repeated calls are bit-identical.
inline GeneratedObject generate_object(const SyntheticSpec& spec,
                                       std::uint64_t seed) {
  Rng dims_rng(core::substream_seed(seed, "dims"));
  auto parts = detail::build_parts(spec.category, dims_rng);

  Rng count_rng(core::substream_seed(seed, "count"));
  const std::int64_t lo = spec.n_gaussians_range.first;
  const std::int64_t hi = spec.n_gaussians_range.second;
  if (lo < 1 || hi < lo) throw ArgumentError("bad n_gaussians_range");
  const std::int64_t n_g =
      lo + (std::int64_t)count_rng.uniform_int((std::uint64_t)(hi - lo + 1));

  GeneratedObject out;
  Rng g_rng(core::substream_seed(seed, "gauss"));
  std::vector<int> labels;
  detail::sample_labeled(parts, n_g, spec.jitter, g_rng, out.gaussian.centers,
                         labels);
  out.gaussian.scales = Tensor<float>({n_g, 3});
  out.gaussian.rotations = Tensor<float>({n_g, 4});
  out.gaussian.opacity = Tensor<float>({n_g, 1});
  out.gaussian.color = Tensor<float>({n_g, 3});
  for (std::int64_t i = 0; i < n_g; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.gaussian.scales.at(i, j) =
          (float)std::log(0.02 * std::exp(g_rng.normal(0.0, 0.4)));
      out.gaussian.color.at(i, j) = (float)g_rng.uniform();
    }
    double q[4], norm = 0;
    for (int j = 0; j < 4; ++j) {
      q[j] = g_rng.normal();
      norm += q[j] * q[j];
    }
    norm = std::sqrt(norm);
    if (q[0] < 0) norm = -norm;  // canonical non-negative scalar part
    for (int j = 0; j < 4; ++j)
      out.gaussian.rotations.at(i, j) = (float)(q[j] / norm);
    out.gaussian.opacity.at(i, 0) = (float)g_rng.uniform(0.2, 1.0);
  }
  out.gaussian.category = spec.category;

  for (const auto& aff : spec.affordances) {
    std::vector<int> aff_parts;
    for (const auto& pn : aff.parts)
      aff_parts.push_back(detail::part_index(parts, pn));
    AffordanceMask m;
    m.scores = Tensor<float>({n_g});
    for (std::int64_t i = 0; i < n_g; ++i)
      m.scores[i] = std::count(aff_parts.begin(), aff_parts.end(),
                               labels[(std::size_t)i]) > 0
                        ? 1.0f
                        : 0.0f;
    out.masks[aff.name] = std::move(m);
  }

  for (std::size_t ai = 0; ai < spec.affordances.size(); ++ai) {
    const auto& aff = spec.affordances[ai];
    Rng pc_rng(core::substream_seed(seed, "pc", ai));
    PointCloudObject pc;
    std::vector<int> pc_labels;
    detail::sample_labeled(parts, spec.n_points, spec.jitter, pc_rng, pc.points,
                           pc_labels);
    std::vector<int> aff_parts;
    for (const auto& pn : aff.parts)
      aff_parts.push_back(detail::part_index(parts, pn));
    pc.affordance_scores = Tensor<float>({spec.n_points});
    for (std::int64_t i = 0; i < spec.n_points; ++i)
      pc.affordance_scores[i] =
          std::count(aff_parts.begin(), aff_parts.end(),
                     pc_labels[(std::size_t)i]) > 0
              ? 1.0f
              : 0.0f;
    pc.category = spec.category;
    pc.affordance = aff.name;
    out.pointclouds.push_back(std::move(pc));
  }
  return out;
}

// The built-in desk-scale corpus: 8 categories, 2-3 affordances each.
inline std::vector<SyntheticSpec> default_specs() {
  std::vector<SyntheticSpec> specs;
  auto mk = [&](const std::string& cat,
                std::vector<AffordanceDef> affs) {
    SyntheticSpec s;
    s.category = cat;
    s.affordances = std::move(affs);
    specs.push_back(std::move(s));
  };
  mk("mug", {{"grasp", {"handle"}},
             {"contain", {"body"}},
             {"pour", {"rim"}}});
  mk("bag", {{"grasp", {"handle"}},
             {"contain", {"body"}},
             {"open", {"toprim"}}});
  mk("knife", {{"grasp", {"handle"}},
               {"cut", {"edge"}},
               {"stab", {"tip"}}});
  mk("door", {{"open", {"knob"}}, {"push", {"panel"}}});
  mk("bottle", {{"contain", {"body"}},
                {"open", {"cap"}},
                {"wrap_grasp", {"body", "neck"}}});
  mk("bowl", {{"contain", {"interior"}},
              {"pour", {"rim"}},
              {"wrap_grasp", {"exterior"}}});
  mk("chair", {{"sit", {"seat"}},
               {"support", {"backrest"}},
               {"move", {"legs"}}});
  mk("hat", {{"wear", {"dome"}}, {"grasp", {"brim"}}});
  return specs;
}

inline const SyntheticSpec& spec_for_category(
    const std::vector<SyntheticSpec>& specs, const std::string& category) {
  for (const auto& s : specs)
    if (s.category == category) return s;
  throw ArgumentError("unknown synthetic category: " + category);
}

}  // namespace affordsplat::datagen
