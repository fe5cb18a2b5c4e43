#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/gscore/types.hpp"

namespace affordsplat::gscore {

// Compact container: 8-byte magic, uint32 little-endian header length, JSON
// header, then one raw little-endian float32 payload per field in header
// order. Round-trips are bit-exact.
inline constexpr char kCompactMagic[8] = {'A', 'S', 'P', 'L',
                                          'A', 'T', 'C', '1'};

inline constexpr const char* kStructColumnLayout =
    "cols 0-2: center xyz; cols 3-5: scale (file-verbatim, log-space); "
    "cols 6-9: rotation quaternion wxyz";

struct CompactFile {
  nlohmann::ordered_json header;
  std::vector<std::pair<std::string, Tensor<float>>> fields;

  const Tensor<float>& field(const std::string& name) const {
    for (const auto& [n, t] : fields)
      if (n == name) return t;
    throw FormatError("compact file missing field: " + name);
  }
  bool has_field(const std::string& name) const {
    for (const auto& [n, t] : fields)
      if (n == name) return true;
    return false;
  }
};

inline void save_compact(const std::string& path, nlohmann::ordered_json header,
                         const std::vector<std::pair<std::string,
                                                     const Tensor<float>*>>& fields) {
  nlohmann::ordered_json field_list = nlohmann::ordered_json::array();
  for (const auto& [name, t] : fields) {
    nlohmann::ordered_json f;
    f["name"] = name;
    f["dtype"] = "f32le";
    f["shape"] = t->shape();
    field_list.push_back(f);
  }
  header["fields"] = field_list;
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write compact file: " + path);
  out.write(kCompactMagic, 8);
  const std::uint32_t len = (std::uint32_t)hs.size();
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(hs.data(), (std::streamsize)hs.size());
  for (const auto& [name, t] : fields)
    out.write(reinterpret_cast<const char*>(t->data()),
              (std::streamsize)(t->numel() * sizeof(float)));
  if (!out) throw DataError("short write to compact file: " + path);
}

inline CompactFile load_compact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open compact file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCompactMagic, 8) != 0)
    throw FormatError("bad compact magic in " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string hs(len, '\0');
  in.read(hs.data(), len);
  if (!in) throw FormatError("compact header truncated in " + path);
  CompactFile f;
  f.header = nlohmann::ordered_json::parse(hs);
  for (const auto& fj : f.header.at("fields")) {
    core::Shape shape = fj.at("shape").get<core::Shape>();
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            (std::streamsize)(t.numel() * sizeof(float)));
    if (!in) throw FormatError("compact payload truncated in " + path);
    f.fields.emplace_back(fj.at("name").get<std::string>(), std::move(t));
  }
  return f;
}

inline void save_gaussian_compact(const GaussianObject& g,
                                  const std::string& path,
                                  std::uint64_t dataset_seed = 0) {
  g.validate();
  nlohmann::ordered_json h;
  h["kind"] = "gaussian_object";
  h["version"] = 1;
  h["id"] = g.id;
  h["category"] = g.category;
  h["dataset_seed"] = dataset_seed;
  h["column_layout"] = kStructColumnLayout;
  save_compact(path, h,
               {{"centers", &g.centers},
                {"scales", &g.scales},
                {"rotations", &g.rotations},
                {"opacity", &g.opacity},
                {"color", &g.color}});
}

inline GaussianObject load_gaussian_compact(const std::string& path) {
  CompactFile f = load_compact(path);
  if (f.header.at("kind") != "gaussian_object")
    throw FormatError("not a gaussian_object compact file: " + path);
  GaussianObject g;
  g.centers = f.field("centers");
  g.scales = f.field("scales");
  g.rotations = f.field("rotations");
  g.opacity = f.field("opacity");
  g.color = f.field("color");
  g.id = f.header.at("id").get<std::string>();
  g.category = f.header.at("category").get<std::string>();
  g.validate();
  return g;
}

inline void save_pointcloud_compact(const PointCloudObject& pc,
                                    const std::string& path,
                                    std::uint64_t dataset_seed = 0) {
  pc.validate();
  nlohmann::ordered_json h;
  h["kind"] = "point_cloud";
  h["version"] = 1;
  h["id"] = pc.id;
  h["category"] = pc.category;
  h["affordance"] = pc.affordance;
  h["dataset_seed"] = dataset_seed;
  save_compact(path, h,
               {{"points", &pc.points},
                {"affordance_scores", &pc.affordance_scores}});
}

inline PointCloudObject load_pointcloud_compact(const std::string& path) {
  CompactFile f = load_compact(path);
  if (f.header.at("kind") != "point_cloud")
    throw FormatError("not a point_cloud compact file: " + path);
  PointCloudObject pc;
  pc.points = f.field("points");
  pc.affordance_scores = f.field("affordance_scores");
  pc.id = f.header.at("id").get<std::string>();
  pc.category = f.header.at("category").get<std::string>();
  pc.affordance = f.header.at("affordance").get<std::string>();
  pc.validate();
  return pc;
}

// Ground-truth masks for one object, one field per affordance.
inline void save_masks_compact(
    const std::string& object_id,
    const std::map<std::string, AffordanceMask>& masks,
    const std::string& path) {
  nlohmann::ordered_json h;
  h["kind"] = "mask_set";
  h["version"] = 1;
  h["id"] = object_id;
  std::vector<std::pair<std::string, const Tensor<float>*>> fields;
  for (const auto& [aff, m] : masks) fields.push_back({aff, &m.scores});
  save_compact(path, h, fields);
}

inline std::map<std::string, AffordanceMask> load_masks_compact(
    const std::string& path) {
  CompactFile f = load_compact(path);
  if (f.header.at("kind") != "mask_set")
    throw FormatError("not a mask_set compact file: " + path);
  std::map<std::string, AffordanceMask> masks;
  for (const auto& [name, t] : f.fields) masks[name] = AffordanceMask{t};
  return masks;
}

}  // namespace affordsplat::gscore
