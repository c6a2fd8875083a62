#pragma once

// Balanced random allocation of units to treatment combinations.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <vector>

#include "rerand/csv.hpp"
#include "rerand/design.hpp"
#include "rerand/rng.hpp"

namespace rerand {

/// Where an allocation came from, for audit trails.
struct DrawOrigin {
  std::uint64_t seed = 0;
  std::uint64_t draw_index = 0;  // global index within the draw sequence
};

/// Unit i receives treatment combination combo_of_unit[i] (0-based row of G).
struct Allocation {
  DesignSpec spec;
  std::vector<std::uint32_t> combo_of_unit;
  DrawOrigin origin;

  std::size_t units() const { return combo_of_unit.size(); }

  bool is_balanced() const {
    if (combo_of_unit.size() != spec.units()) return false;
    std::vector<std::size_t> counts(spec.combinations(), 0);
    for (auto j : combo_of_unit) {
      if (j >= counts.size()) return false;
      ++counts[j];
    }
    const auto r = static_cast<std::size_t>(spec.replicates);
    return std::all_of(counts.begin(), counts.end(),
                       [r](std::size_t c) { return c == r; });
  }

  void require_balanced() const {
    if (!is_balanced()) {
      fail(ErrorKind::Dimension,
           "allocation is not balanced: every combination must receive exactly " +
               std::to_string(spec.replicates) + " units");
    }
  }

  friend bool operator==(const Allocation& a, const Allocation& b) {
    return a.spec == b.spec && a.combo_of_unit == b.combo_of_unit;
  }
};

/// Units 0..r-1 to combination 0, the next r to combination 1, and so on.
inline std::vector<std::uint32_t> canonical_multiset(const DesignSpec& spec) {
  std::vector<std::uint32_t> out(spec.units());
  const auto r = static_cast<std::size_t>(spec.replicates);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint32_t>(i / r);
  }
  return out;
}

/// Uniform over all n! / (r!)^(2^K) balanced allocations.
inline void draw_allocation(const DesignSpec& spec, Engine& rng,
                            std::vector<std::uint32_t>& combo_of_unit) {
  const auto r = static_cast<std::size_t>(spec.replicates);
  combo_of_unit.resize(spec.units());
  for (std::size_t i = 0; i < combo_of_unit.size(); ++i) {
    combo_of_unit[i] = static_cast<std::uint32_t>(i / r);
  }
  std::shuffle(combo_of_unit.begin(), combo_of_unit.end(), rng);
}

inline Allocation random_allocation(const DesignSpec& spec, Engine& rng) {
  spec.validate();
  Allocation alloc{spec, {}, {}};
  draw_allocation(spec, rng, alloc.combo_of_unit);
  return alloc;
}

/// W-tilde: row i is the model-matrix row of unit i's combination.
class AssignmentMatrix {
 public:
  AssignmentMatrix() = default;
  AssignmentMatrix(SignMatrix entries, std::vector<std::string> labels)
      : entries_(std::move(entries)), labels_(std::move(labels)) {}

  const SignMatrix& entries() const { return entries_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t units() const { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t columns() const { return static_cast<std::size_t>(entries_.cols()); }
  std::int8_t operator()(std::size_t i, std::size_t f) const {
    return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
  }

  /// -W-tilde on the effect columns; the mean column stays +1.
  AssignmentMatrix negated() const {
    SignMatrix flipped = entries_;
    flipped.rightCols(flipped.cols() - 1) *= std::int8_t{-1};
    return {std::move(flipped), labels_};
  }

 private:
  SignMatrix entries_;
  std::vector<std::string> labels_;
};

inline AssignmentMatrix expand_assignment(const Allocation& alloc, const ModelMatrix& mm) {
  if (alloc.spec.factors != mm.factors()) {
    fail(ErrorKind::Dimension, "allocation and model matrix disagree on K");
  }
  const auto n = static_cast<Eigen::Index>(alloc.units());
  const auto cols = static_cast<Eigen::Index>(mm.size());
  SignMatrix w(n, cols);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = alloc.combo_of_unit[static_cast<std::size_t>(i)];
    if (j >= mm.entries().rows()) {
      fail(ErrorKind::Dimension, "combination index out of range");
    }
    w.row(i) = mm.entries().row(j);
  }
  return {std::move(w), mm.labels()};
}

/// Sends every unit to the combination with all factor levels flipped.
/// Odd-order effect columns of W-tilde change sign; even-order interaction
/// columns are products of an even number of flipped factors and do not.
inline Allocation negate(const Allocation& alloc, const ModelMatrix& mm) {
  Allocation out = alloc;
  for (auto& j : out.combo_of_unit) j = static_cast<std::uint32_t>(mm.mirror_row(j));
  return out;
}

/// unit_id, combination_index (1-based), then one -1/+1 column per factor.
inline void write_allocation(std::ostream& os, const Allocation& alloc,
                             const ModelMatrix& mm) {
  os << "unit_id,combination_index";
  for (const auto& name : mm.factor_names()) os << ',' << name;
  os << '\n';
  const auto K = static_cast<std::size_t>(mm.factors());
  for (std::size_t i = 0; i < alloc.units(); ++i) {
    const auto j = alloc.combo_of_unit[i];
    os << (i + 1) << ',' << (j + 1);
    for (std::size_t k = 0; k < K; ++k) {
      os << ',' << (mm(j, k + 1) > 0 ? "+1" : "-1");
    }
    os << '\n';
  }
}

inline Allocation read_allocation(std::istream& in, const DesignSpec& spec,
                                  const ModelMatrix& mm) {
  const auto table = csv::read(in);
  const auto unit_col = table.column("unit_id");
  const auto combo_col = table.column("combination_index");
  std::vector<std::size_t> factor_cols;
  for (const auto& name : mm.factor_names()) factor_cols.push_back(table.column(name));

  if (table.rows.size() != spec.units()) {
    fail(ErrorKind::Dimension, "allocation has " + std::to_string(table.rows.size()) +
                                   " units, design expects " +
                                   std::to_string(spec.units()));
  }
  Allocation alloc{spec, std::vector<std::uint32_t>(table.rows.size()), {}};
  std::vector<int> levels(factor_cols.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (csv::parse_integer(row[unit_col]) != static_cast<long long>(i + 1)) {
      fail(ErrorKind::Parse, "unit_id must run 1..n in order (row " +
                                 std::to_string(i + 1) + ")");
    }
    const auto combo = csv::parse_integer(row[combo_col]);
    if (combo < 1 || combo > static_cast<long long>(spec.combinations())) {
      fail(ErrorKind::Parse, "combination_index out of range at unit " +
                                 std::to_string(i + 1));
    }
    for (std::size_t k = 0; k < factor_cols.size(); ++k) {
      levels[k] = static_cast<int>(csv::parse_integer(row[factor_cols[k]]));
    }
    const auto j = static_cast<std::size_t>(combo - 1);
    if (mm.row_of_levels(levels) != j) {
      fail(ErrorKind::Parse, "factor levels disagree with combination_index at unit " +
                                 std::to_string(i + 1));
    }
    alloc.combo_of_unit[i] = static_cast<std::uint32_t>(j);
  }
  alloc.require_balanced();
  return alloc;
}

}  // namespace rerand
