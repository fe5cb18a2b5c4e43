#pragma once

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/gscore/types.hpp"

namespace affordsplat::gscore {

enum class PlyFormat { BinaryLittleEndian, Ascii };

namespace detail {

inline void normalize_quaternions(Tensor<float>& rot) {
  const std::int64_t n = rot.dim(0);
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < 4; ++j) {
      const double q = rot.at(i, j);
      s += q * q;
    }
    const double norm = std::sqrt(s);
    if (norm == 0.0)
      throw FormatError("zero quaternion at row " + std::to_string(i));
    // Leave already-normalized rows untouched so writes round-trip bit-exact.
    if (std::abs(norm - 1.0) > 1e-6) {
      for (std::int64_t j = 0; j < 4; ++j)
        rot.at(i, j) = static_cast<float>(rot.at(i, j) / norm);
    }
    // Canonical sign: non-negative scalar component.
    if (rot.at(i, 0) < 0.0f)
      for (std::int64_t j = 0; j < 4; ++j) rot.at(i, j) = -rot.at(i, j);
  }
}

inline std::string float_to_ascii(float v) {
  char buf[64];
  const int n = std::snprintf(buf, sizeof(buf), "%.9g", (double)v);
  return std::string(buf, (std::size_t)n);
}

}  // namespace detail

// Reads a 3DGS PLY file. Required attributes: x,y,z, f_dc_0..2, opacity,
// scale_0..2, rot_0..3; any number of f_rest_* is accepted. Attribute order
// in the file does not matter; unknown attributes are skipped.
inline GaussianObject load_gaussian_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open PLY file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty PLY file");
  if (line.back() == '\r') line.pop_back();
  if (line != "ply") throw FormatError("not a PLY file: " + path);

  PlyFormat format = PlyFormat::BinaryLittleEndian;
  std::int64_t n_vertices = -1;
  std::vector<std::string> props;
  bool in_vertex_element = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian")
        format = PlyFormat::BinaryLittleEndian;
      else if (fmt == "ascii")
        format = PlyFormat::Ascii;
      else
        throw FormatError("unsupported PLY format: " + fmt);
    } else if (tok == "element") {
      std::string name;
      std::int64_t count;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) n_vertices = count;
    } else if (tok == "property") {
      if (!in_vertex_element) continue;
      std::string type, name;
      ls >> type >> name;
      if (type != "float" && type != "float32")
        throw FormatError("unsupported property type: " + type);
      props.push_back(name);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (n_vertices < 0) throw FormatError("PLY missing vertex element");
  if (n_vertices == 0)
    throw DataError("PLY declares zero vertices: " + path);

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < props.size(); ++i) col[props[i]] = i;
  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end())
      throw FormatError("PLY missing required attribute: " + name);
    return it->second;
  };

  const std::size_t n_props = props.size();
  std::vector<float> raw((std::size_t)n_vertices * n_props);
  if (format == PlyFormat::BinaryLittleEndian) {
    in.read(reinterpret_cast<char*>(raw.data()),
            (std::streamsize)(raw.size() * sizeof(float)));
    if (!in) throw FormatError("PLY payload truncated: " + path);
  } else {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      std::string tok;
      if (!(in >> tok)) throw FormatError("PLY payload truncated: " + path);
      raw[i] = std::strtof(tok.c_str(), nullptr);
    }
  }

  const std::size_t cx = require("x"), cy = require("y"), cz = require("z");
  const std::size_t cop = require("opacity");
  std::size_t cs[3], cr[4], cdc[3];
  for (int j = 0; j < 3; ++j)
    cs[j] = require("scale_" + std::to_string(j));
  for (int j = 0; j < 4; ++j)
    cr[j] = require("rot_" + std::to_string(j));
  for (int j = 0; j < 3; ++j)
    cdc[j] = require("f_dc_" + std::to_string(j));
  std::vector<std::size_t> crest;
  for (int j = 0;; ++j) {
    auto it = col.find("f_rest_" + std::to_string(j));
    if (it == col.end()) break;
    crest.push_back(it->second);
  }

  const std::int64_t n = n_vertices;
  GaussianObject g;
  g.centers = Tensor<float>({n, 3});
  g.scales = Tensor<float>({n, 3});
  g.rotations = Tensor<float>({n, 4});
  g.opacity = Tensor<float>({n, 1});
  g.color = Tensor<float>({n, (std::int64_t)(3 + crest.size())});
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = raw.data() + (std::size_t)i * n_props;
    g.centers.at(i, 0) = row[cx];
    g.centers.at(i, 1) = row[cy];
    g.centers.at(i, 2) = row[cz];
    for (int j = 0; j < 3; ++j) g.scales.at(i, j) = row[cs[j]];
    for (int j = 0; j < 4; ++j) g.rotations.at(i, j) = row[cr[j]];
    g.opacity.at(i, 0) = row[cop];
    for (int j = 0; j < 3; ++j) g.color.at(i, j) = row[cdc[j]];
    for (std::size_t j = 0; j < crest.size(); ++j)
      g.color.at(i, (std::int64_t)(3 + j)) = row[crest[j]];
  }
  detail::normalize_quaternions(g.rotations);
  return g;
}

// Writes the canonical 3DGS attribute layout:
// x,y,z, f_dc_0..2, f_rest_*, opacity, scale_0..2, rot_0..3.
inline void save_gaussian_ply(const GaussianObject& g, const std::string& path,
                              PlyFormat format = PlyFormat::BinaryLittleEndian) {
  g.validate();
  const std::int64_t n = g.count();
  const std::int64_t n_rest = g.color.dim(1) - 3;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write PLY file: " + path);
  out << "ply\n";
  out << "format "
      << (format == PlyFormat::BinaryLittleEndian ? "binary_little_endian"
                                                  : "ascii")
      << " 1.0\n";
  out << "element vertex " << n << "\n";
  auto prop = [&](const std::string& name) {
    out << "property float " << name << "\n";
  };
  prop("x");
  prop("y");
  prop("z");
  for (int j = 0; j < 3; ++j) prop("f_dc_" + std::to_string(j));
  for (std::int64_t j = 0; j < n_rest; ++j)
    prop("f_rest_" + std::to_string(j));
  prop("opacity");
  for (int j = 0; j < 3; ++j) prop("scale_" + std::to_string(j));
  for (int j = 0; j < 4; ++j) prop("rot_" + std::to_string(j));
  out << "end_header\n";

  std::vector<float> row((std::size_t)(3 + 3 + n_rest + 1 + 3 + 4));
  for (std::int64_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (int j = 0; j < 3; ++j) row[c++] = g.centers.at(i, j);
    for (int j = 0; j < 3; ++j) row[c++] = g.color.at(i, j);
    for (std::int64_t j = 0; j < n_rest; ++j) row[c++] = g.color.at(i, 3 + j);
    row[c++] = g.opacity.at(i, 0);
    for (int j = 0; j < 3; ++j) row[c++] = g.scales.at(i, j);
    for (int j = 0; j < 4; ++j) row[c++] = g.rotations.at(i, j);
    if (format == PlyFormat::BinaryLittleEndian) {
      out.write(reinterpret_cast<const char*>(row.data()),
                (std::streamsize)(row.size() * sizeof(float)));
    } else {
      for (std::size_t j = 0; j < row.size(); ++j)
        out << (j ? " " : "") << detail::float_to_ascii(row[j]);
      out << "\n";
    }
  }
  if (!out) throw DataError("short write to PLY file: " + path);
}

}  // namespace affordsplat::gscore
