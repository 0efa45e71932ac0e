#pragma once

// On-disk formats.
//
// Feature file:  "HHCHFEAT" u32 version u64 rows u64 cols, then rows*cols
//                little-endian f32 in row-major order. Also used for
//                continuous code matrices.
// Code file:     "HHCHCODE" u32 version u64 bits u64 count, then per row
//                ceil(bits/64) little-endian u64 words; bit k of a row is
//                bit (k % 64) of word k / 64, set for +1.
// Label file:    one line per row, whitespace-separated integer label ids.
// Hierarchy:     JSON object {format, version, geometry, curvature, counts,
//                layers, instance_parent, proto_parent}.

#include "hhch/clustering.hpp"
#include "hhch/core.hpp"
#include "hhch/model.hpp"
#include "hhch/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace hhch {

inline constexpr char kFeatureMagic[8] = {'H', 'H', 'C', 'H', 'F', 'E', 'A', 'T'};
inline constexpr char kCodeMagic[8] = {'H', 'H', 'C', 'H', 'C', 'O', 'D', 'E'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kCodeVersion = 1;
inline constexpr int kHierarchyVersion = 1;

namespace detail {

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataFormatError("cannot open " + path);
  return is;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataFormatError("cannot open " + path + " for writing");
  return os;
}

inline std::uint64_t remaining_bytes(std::istream& is) {
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto end = is.tellg();
  is.seekg(here);
  return static_cast<std::uint64_t>(end - here);
}

inline void expect_magic(std::istream& is, const char (&magic)[8], const std::string& path) {
  char got[8];
  if (!is.read(got, 8) || std::memcmp(got, magic, 8) != 0) throw DataFormatError(path + ": bad magic");
}

}  // namespace detail

inline void write_features(const std::string& path, const RowMatrix& m) {
  auto os = detail::open_out(path);
  os.write(kFeatureMagic, 8);
  detail::write_le<std::uint32_t>(os, kFeatureVersion);
  detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) detail::write_le<float>(os, static_cast<float>(m(i, j)));
  }
  if (!os) throw DataFormatError("failed writing " + path);
}

// Rows promoted to double. Rejects length mismatches and NaN/Inf.
inline RowMatrix read_features(const std::string& path) {
  auto is = detail::open_in(path);
  detail::expect_magic(is, kFeatureMagic, path);
  const auto version = detail::read_le<std::uint32_t>(is, path + " header");
  if (version != kFeatureVersion) throw DataFormatError(path + ": unsupported version " + std::to_string(version));
  const auto rows = detail::read_le<std::uint64_t>(is, path + " header");
  const auto cols = detail::read_le<std::uint64_t>(is, path + " header");
  const std::uint64_t payload = detail::remaining_bytes(is);
  if (cols != 0 && rows > payload / (cols * 4)) throw DataFormatError(path + ": byte length does not match header");
  if (rows * cols * 4 != payload) throw DataFormatError(path + ": byte length does not match header");
  RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const float v = detail::read_le<float>(is, path + " payload");
      if (!std::isfinite(v)) {
        throw DataFormatError(path + ": non-finite value at row " + std::to_string(i) + ", column " + std::to_string(j));
      }
      m(i, j) = v;
    }
  }
  return m;
}

inline void write_labels(const std::string& path, const std::vector<LabelSet>& labels) {
  auto os = detail::open_out(path);
  for (const auto& row : labels) {
    for (std::size_t k = 0; k < row.size(); ++k) os << (k ? " " : "") << row[k];
    os << '\n';
  }
  if (!os) throw DataFormatError("failed writing " + path);
}

inline std::vector<LabelSet> read_labels(const std::string& path) {
  auto is = detail::open_in(path);
  std::vector<LabelSet> out;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    LabelSet row;
    std::string token;
    while (ss >> token) {
      std::size_t used = 0;
      std::int64_t v = 0;
      try {
        v = std::stoll(token, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != token.size()) {
        throw DataFormatError(path + ": bad label '" + token + "' on line " + std::to_string(out.size() + 1));
      }
      row.push_back(v);
    }
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    out.push_back(std::move(row));
  }
  return out;
}

inline void write_codes(const std::string& path, const std::vector<BinaryCode>& codes, std::size_t bits) {
  auto os = detail::open_out(path);
  os.write(kCodeMagic, 8);
  detail::write_le<std::uint32_t>(os, kCodeVersion);
  detail::write_le<std::uint64_t>(os, bits);
  detail::write_le<std::uint64_t>(os, codes.size());
  for (const auto& c : codes) {
    detail::require(c.size() == bits, "write_codes: inconsistent code length");
    for (auto w : c.words()) detail::write_le<std::uint64_t>(os, w);
  }
  if (!os) throw DataFormatError("failed writing " + path);
}

inline std::vector<BinaryCode> read_codes(const std::string& path) {
  auto is = detail::open_in(path);
  detail::expect_magic(is, kCodeMagic, path);
  const auto version = detail::read_le<std::uint32_t>(is, path + " header");
  if (version != kCodeVersion) throw DataFormatError(path + ": unsupported version " + std::to_string(version));
  const auto bits = detail::read_le<std::uint64_t>(is, path + " header");
  const auto count = detail::read_le<std::uint64_t>(is, path + " header");
  if (bits == 0) throw DataFormatError(path + ": zero code length");
  const std::uint64_t words = (bits + 63) / 64;
  const std::uint64_t payload = detail::remaining_bytes(is);
  if (count > payload / (words * 8) || count * words * 8 != payload) {
    throw DataFormatError(path + ": byte length does not match header");
  }
  std::vector<BinaryCode> out;
  out.reserve(count);
  const std::uint64_t tail_mask = bits % 64 == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << (bits % 64)) - 1;
  for (std::uint64_t i = 0; i < count; ++i) {
    BinaryCode c(bits);
    for (std::uint64_t w = 0; w < words; ++w) c.words()[w] = detail::read_le<std::uint64_t>(is, path + " payload");
    if ((c.words().back() & ~tail_mask) != 0) throw DataFormatError(path + ": padding bits set in row " + std::to_string(i));
    out.push_back(std::move(c));
  }
  return out;
}

inline nlohmann::json hierarchy_to_json(const Hierarchy& h) {
  using nlohmann::json;
  json j;
  j["format"] = "hhch-hierarchy";
  j["version"] = kHierarchyVersion;
  j["geometry"] = h.geometry == ClusterGeometry::hyperbolic ? "hyperbolic" : "spherical";
  j["curvature"] = h.curvature;
  json counts = json::array(), layers = json::array();
  for (const auto& layer : h.layers) {
    counts.push_back(layer.rows());
    json rows = json::array();
    for (Eigen::Index i = 0; i < layer.rows(); ++i) {
      rows.push_back(std::vector<double>(layer.row(i).data(), layer.row(i).data() + layer.cols()));
    }
    layers.push_back(std::move(rows));
  }
  j["counts"] = counts;
  j["layers"] = layers;
  j["instance_parent"] = h.instance_parent;
  j["proto_parent"] = h.proto_parent;
  return j;
}

inline Hierarchy hierarchy_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "hhch-hierarchy") throw DataFormatError("hierarchy: wrong format tag");
    if (j.at("version").get<int>() != kHierarchyVersion) throw DataFormatError("hierarchy: unsupported version");
    Hierarchy h;
    const auto geometry = j.at("geometry").get<std::string>();
    if (geometry == "hyperbolic") {
      h.geometry = ClusterGeometry::hyperbolic;
    } else if (geometry == "spherical") {
      h.geometry = ClusterGeometry::spherical;
    } else {
      throw DataFormatError("hierarchy: unknown geometry " + geometry);
    }
    h.curvature = j.at("curvature").get<double>();
    const auto counts = j.at("counts").get<std::vector<std::size_t>>();
    const auto& layers = j.at("layers");
    if (layers.size() != counts.size()) throw DataFormatError("hierarchy: counts do not match layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto rows = layers[l].get<std::vector<std::vector<double>>>();
      if (rows.size() != counts[l]) throw DataFormatError("hierarchy: layer size does not match counts");
      const std::size_t dim = rows.empty() ? 0 : rows.front().size();
      RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != dim) throw DataFormatError("hierarchy: ragged prototype rows");
        for (std::size_t k = 0; k < dim; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
      }
      h.layers.push_back(std::move(m));
    }
    h.instance_parent = j.at("instance_parent").get<std::vector<std::size_t>>();
    h.proto_parent = j.at("proto_parent").get<std::vector<std::vector<std::size_t>>>();
    h.validate();
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError(std::string("hierarchy: ") + e.what());
  }
}

inline void write_hierarchy(const std::string& path, const Hierarchy& h) {
  auto os = detail::open_out(path);
  os << hierarchy_to_json(h).dump() << '\n';
  if (!os) throw DataFormatError("failed writing " + path);
}

inline Hierarchy read_hierarchy(const std::string& path) {
  auto is = detail::open_in(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError(path + ": " + e.what());
  }
  return hierarchy_from_json(j);
}

}  // namespace hhch
