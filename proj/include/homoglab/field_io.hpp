#ifndef HOMOGLAB_FIELD_IO_HPP
#define HOMOGLAB_FIELD_IO_HPP

// Text serialization of lattice fields: a CSV body with one row per site
// (site index, coordinates, component values) and a JSON header carrying the
// box. Values are written with 17 significant digits so that reading them back
// reproduces the doubles exactly.

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "homoglab/lattice.hpp"

namespace homoglab {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct FieldTable {
  Box box;
  int components = 1;
  std::vector<double> values;  // site-major, `components` entries per site
};

inline nlohmann::json field_header(const FieldTable& t, const std::string& kind) {
  return {{"kind", kind}, {"d", t.box.dim()}, {"L", t.box.side()}, {"components", t.components},
          {"indexing", "index = sum_k x_k L^(k-1)"}};
}

inline void write_field_csv(std::ostream& os, const FieldTable& t) {
  const int d = t.box.dim();
  os << "site";
  for (int k = 0; k < d; ++k) os << ",x" << (k + 1);
  for (int c = 0; c < t.components; ++c) os << ",v" << c;
  os << '\n';
  for (Site x = 0; x < t.box.size(); ++x) {
    const auto co = t.box.coords(x);
    os << x;
    for (int k = 0; k < d; ++k) os << ',' << co[k];
    for (int c = 0; c < t.components; ++c) os << ',' << format_double(t.values[x * t.components + c]);
    os << '\n';
  }
}

/// Parses a CSV body written by write_field_csv, given the header's box and
/// component count. Coordinates are cross-checked against the site index.
inline FieldTable read_field_csv(std::istream& is, const nlohmann::json& header) {
  FieldTable t;
  t.box = Box(header.at("d").get<int>(), header.at("L").get<int>());
  t.components = header.at("components").get<int>();
  t.values.assign(t.box.size() * t.components, 0.0);
  std::string line;
  std::getline(is, line);  // column names
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    const Site x = std::stoull(cell);
    if (x >= t.box.size()) throw LatticeError("field csv: site index out of range");
    const auto co = t.box.coords(x);
    for (int k = 0; k < t.box.dim(); ++k) {
      std::getline(ss, cell, ',');
      if (std::stoi(cell) != co[k]) throw LatticeError("field csv: coordinates disagree with site index");
    }
    for (int c = 0; c < t.components; ++c) {
      std::getline(ss, cell, ',');
      t.values[x * t.components + c] = std::stod(cell);
    }
    ++rows;
  }
  if (rows != t.box.size()) throw LatticeError("field csv: row count does not match box");
  return t;
}

inline FieldTable to_table(const ScalarField& u) { return {u.box, 1, u.values}; }
inline FieldTable to_table(const VectorField& F) { return {F.box, F.box.dim(), F.values}; }
inline FieldTable to_table(const CoefficientField& a) { return {a.box, a.box.dim(), a.diag}; }

}  // namespace homoglab

#endif  // HOMOGLAB_FIELD_IO_HPP
