#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mel/common.hpp"

namespace mel {

// Axis-aligned box mesh, d in {1,2}. Sides are numbered
//   0: x-min, 1: x-max, 2: y-min, 3: y-max.
// Facet tags name subsets of sides; "all" is always present.
class Mesh {
 public:
  Mesh(int dim, std::vector<double> lo, std::vector<double> hi,
       std::vector<int> cells)
      : dim_(dim), lo_(std::move(lo)), hi_(std::move(hi)),
        cells_(std::move(cells)) {
    if (dim_ < 1 || dim_ > 2) throw ConfigError("mesh: dim must be 1 or 2");
    if ((int)lo_.size() != dim_ || (int)hi_.size() != dim_ ||
        (int)cells_.size() != dim_)
      throw ConfigError("mesh: axis data does not match dim");
    for (int a = 0; a < dim_; ++a) {
      if (hi_[a] <= lo_[a]) throw ConfigError("mesh: non-positive extent");
      if (cells_[a] < 2) throw ConfigError("mesh: need >= 2 cells per axis");
    }
    std::set<int> all;
    for (int s = 0; s < 2 * dim_; ++s) all.insert(s);
    tags_["all"] = all;
  }

  static Mesh unit(int dim, int n) {
    return Mesh(dim, std::vector<double>(dim, 0.0),
                std::vector<double>(dim, 1.0), std::vector<int>(dim, n));
  }

  int dim() const { return dim_; }
  double lo(int axis) const { return lo_[axis]; }
  double hi(int axis) const { return hi_[axis]; }
  int cells(int axis) const { return cells_[axis]; }
  double h(int axis) const { return (hi_[axis] - lo_[axis]) / cells_[axis]; }

  int cell_count() const {
    int n = 1;
    for (int a = 0; a < dim_; ++a) n *= cells_[a];
    return n;
  }

  double volume() const {
    double v = 1.0;
    for (int a = 0; a < dim_; ++a) v *= hi_[a] - lo_[a];
    return v;
  }

  // Measure of the full boundary (point count for d = 1).
  double boundary_measure() const {
    if (dim_ == 1) return 2.0;
    return 2.0 * ((hi_[0] - lo_[0]) + (hi_[1] - lo_[1]));
  }

  bool inside(const VectorXd& x, double tol = 1e-12) const {
    for (int a = 0; a < dim_; ++a)
      if (x[a] < lo_[a] - tol || x[a] > hi_[a] + tol) return false;
    return true;
  }

  void tag(const std::string& name, const std::set<int>& sides) {
    for (int s : sides)
      if (s < 0 || s >= 2 * dim_) throw ConfigError("mesh: bad side index");
    tags_[name] = sides;
  }

  bool has_tag(const std::string& name) const { return tags_.count(name) > 0; }

  const std::set<int>& sides(const std::string& tag) const {
    auto it = tags_.find(tag);
    if (it == tags_.end()) throw UnknownTag("mesh: unknown facet tag " + tag);
    return it->second;
  }

 private:
  int dim_;
  std::vector<double> lo_, hi_;
  std::vector<int> cells_;
  std::map<std::string, std::set<int>> tags_;
};

}  // namespace mel
