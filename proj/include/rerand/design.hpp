#pragma once

// Design and model matrices for balanced two-level factorial designs.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rerand/error.hpp"

namespace rerand {

using SignMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr int kMaxFactors = 20;
// A full model matrix has 4^K entries; beyond this it is not materialized.
inline constexpr int kMaxModelFactors = 12;

enum class FactorOrder { Lexicographic, Yates };

inline std::string to_string(FactorOrder order) {
  return order == FactorOrder::Yates ? "yates" : "lexicographic";
}

inline FactorOrder parse_factor_order(std::string_view text) {
  if (text == "lexicographic" || text == "lex") return FactorOrder::Lexicographic;
  if (text == "yates") return FactorOrder::Yates;
  fail(ErrorKind::Parse, "unknown factor order '" + std::string(text) + "'");
}

inline std::vector<std::string> default_factor_names(int factors) {
  std::vector<std::string> names;
  for (int k = 0; k < factors; ++k) {
    if (k < 26) {
      names.emplace_back(1, static_cast<char>('A' + k));
    } else {
      names.push_back("F" + std::to_string(k + 1));
    }
  }
  return names;
}

struct DesignSpec {
  int factors = 1;
  int replicates = 1;
  FactorOrder order = FactorOrder::Lexicographic;
  std::vector<std::string> factor_names;  // empty means A, B, C, ...

  static DesignSpec make(int factors, int replicates,
                         FactorOrder order = FactorOrder::Lexicographic,
                         std::vector<std::string> names = {}) {
    DesignSpec spec{factors, replicates, order, std::move(names)};
    spec.validate();
    return spec;
  }

  std::size_t combinations() const { return std::size_t{1} << factors; }
  std::size_t units() const {
    return static_cast<std::size_t>(replicates) * combinations();
  }

  std::vector<std::string> names() const {
    return factor_names.empty() ? default_factor_names(factors) : factor_names;
  }

  void validate(int max_factors = kMaxFactors) const {
    if (factors < 1 || factors > max_factors) {
      fail(ErrorKind::Domain, "factor count K=" + std::to_string(factors) +
                                  " outside supported range [1, " +
                                  std::to_string(max_factors) + "]");
    }
    if (replicates < 1) {
      fail(ErrorKind::Domain, "replicates per cell must be >= 1");
    }
    if (!factor_names.empty()) {
      if (static_cast<int>(factor_names.size()) != factors) {
        fail(ErrorKind::Domain, "expected " + std::to_string(factors) +
                                    " factor names, got " +
                                    std::to_string(factor_names.size()));
      }
      for (std::size_t a = 0; a < factor_names.size(); ++a) {
        const auto& name = factor_names[a];
        if (name.empty() || name.find_first_of(":, \t") != std::string::npos) {
          fail(ErrorKind::Domain, "invalid factor name '" + name + "'");
        }
        for (std::size_t b = 0; b < a; ++b) {
          if (factor_names[b] == name) {
            fail(ErrorKind::Domain, "duplicate factor name '" + name + "'");
          }
        }
      }
    }
  }

  friend bool operator==(const DesignSpec&, const DesignSpec&) = default;
};

/// The 2^K x K matrix of treatment combinations, entries in {-1, +1}.
struct DesignMatrix {
  int factors = 0;
  FactorOrder order = FactorOrder::Lexicographic;
  SignMatrix entries;

  std::size_t rows() const { return static_cast<std::size_t>(entries.rows()); }
};

/// Lexicographic: column k flips every 2^(K-1-k) rows and starts at -1.
/// Yates: the lexicographic columns in reverse order, so the first factor
/// alternates fastest.
inline DesignMatrix build_design_matrix(const DesignSpec& spec) {
  spec.validate();
  const int K = spec.factors;
  const auto rows = static_cast<Eigen::Index>(spec.combinations());
  DesignMatrix g{K, spec.order, SignMatrix(rows, K)};
  for (Eigen::Index j = 0; j < rows; ++j) {
    for (int k = 0; k < K; ++k) {
      const int bit = spec.order == FactorOrder::Lexicographic ? K - 1 - k : k;
      g.entries(j, k) = ((j >> bit) & 1) ? std::int8_t{1} : std::int8_t{-1};
    }
  }
  return g;
}

/// G-tilde: mean column, main effects, then interactions grouped by order.
/// Column f is identified by the bitmask of factors it multiplies together
/// (bit k set means factor k participates); mask 0 is the mean column.
class ModelMatrix {
 public:
  ModelMatrix() = default;

  int factors() const { return factors_; }
  std::size_t size() const { return masks_.size(); }
  FactorOrder order() const { return order_; }
  const SignMatrix& entries() const { return entries_; }
  std::int8_t operator()(std::size_t row, std::size_t col) const {
    return entries_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
  }

  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t f) const { return labels_.at(f); }
  const std::vector<std::string>& factor_names() const { return factor_names_; }
  std::uint32_t mask(std::size_t f) const { return masks_.at(f); }
  /// Number of factors in the interaction (1 = main effect, 0 = mean).
  int effect_order(std::size_t f) const { return std::popcount(masks_.at(f)); }

  /// Indices of all factorial effects, i.e. every column except the mean.
  std::vector<std::size_t> effects() const {
    std::vector<std::size_t> out(size() - 1);
    for (std::size_t f = 1; f < size(); ++f) out[f - 1] = f;
    return out;
  }

  std::vector<std::size_t> effects_of_order(int order) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 1; f < size(); ++f) {
      if (effect_order(f) == order) out.push_back(f);
    }
    return out;
  }

  std::size_t column_of_mask(std::uint32_t mask) const {
    return column_of_mask_.at(mask);
  }

  /// Row index of the treatment combination with every factor level flipped.
  std::size_t mirror_row(std::size_t row) const { return mirror_.at(row); }

  /// Row index of a sign pattern over the K factors.
  std::size_t row_of_levels(const std::vector<int>& levels) const {
    if (static_cast<int>(levels.size()) != factors_) {
      fail(ErrorKind::Dimension, "level vector length does not match K");
    }
    std::uint32_t key = 0;
    for (int k = 0; k < factors_; ++k) {
      if (levels[k] != -1 && levels[k] != 1) {
        fail(ErrorKind::Parse, "factor levels must be -1 or +1");
      }
      if (levels[k] == 1) key |= (1u << k);
    }
    return row_of_key_.at(key);
  }

 private:
  friend ModelMatrix expand_model_matrix(const DesignMatrix& g,
                                         std::vector<std::string> names);

  int factors_ = 0;
  FactorOrder order_ = FactorOrder::Lexicographic;
  SignMatrix entries_;
  std::vector<std::string> labels_;
  std::vector<std::string> factor_names_;
  std::vector<std::uint32_t> masks_;
  std::vector<std::size_t> column_of_mask_;
  std::vector<std::size_t> mirror_;
  std::vector<std::size_t> row_of_key_;
};

namespace detail {

inline std::string effect_label(std::uint32_t mask,
                                const std::vector<std::string>& names) {
  const bool single_char = std::all_of(names.begin(), names.end(),
                                       [](const auto& s) { return s.size() == 1; });
  std::string label;
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (!(mask & (1u << k))) continue;
    if (!label.empty() && !single_char) label += ':';
    label += names[k];
  }
  return label;
}

// All k-subsets of {0..K-1} in lexicographic order of their index sequences.
inline void append_combinations(int K, int k, std::vector<std::uint32_t>& out) {
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    std::uint32_t mask = 0;
    for (int i : idx) mask |= (1u << i);
    out.push_back(mask);
    int i = k - 1;
    while (i >= 0 && idx[i] == K - k + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int t = i + 1; t < k; ++t) idx[t] = idx[t - 1] + 1;
  }
}

}  // namespace detail

inline ModelMatrix expand_model_matrix(const DesignMatrix& g,
                                       std::vector<std::string> names = {}) {
  const int K = g.factors;
  if (K < 1 || K > kMaxModelFactors) {
    fail(ErrorKind::Domain, "model matrix supports 1 <= K <= " +
                                std::to_string(kMaxModelFactors));
  }
  if (names.empty()) names = default_factor_names(K);
  if (static_cast<int>(names.size()) != K) {
    fail(ErrorKind::Dimension, "factor name count does not match K");
  }

  ModelMatrix mm;
  mm.factors_ = K;
  mm.order_ = g.order;
  mm.factor_names_ = names;
  mm.masks_.push_back(0);
  for (int order = 1; order <= K; ++order) {
    detail::append_combinations(K, order, mm.masks_);
  }

  const auto n_cols = mm.masks_.size();
  const auto n_rows = static_cast<Eigen::Index>(g.rows());
  mm.entries_.resize(n_rows, static_cast<Eigen::Index>(n_cols));
  mm.column_of_mask_.assign(n_cols, 0);
  for (std::size_t f = 0; f < n_cols; ++f) {
    const auto mask = mm.masks_[f];
    mm.column_of_mask_[mask] = f;
    mm.labels_.push_back(f == 0 ? "mean" : detail::effect_label(mask, names));
    for (Eigen::Index j = 0; j < n_rows; ++j) {
      std::int8_t v = 1;
      for (int k = 0; k < K; ++k) {
        if (mask & (1u << k)) v = static_cast<std::int8_t>(v * g.entries(j, k));
      }
      mm.entries_(j, static_cast<Eigen::Index>(f)) = v;
    }
  }

  // Key of a row: bit k set when factor k is at its high level.
  mm.row_of_key_.assign(static_cast<std::size_t>(n_rows), 0);
  std::vector<std::uint32_t> key_of_row(static_cast<std::size_t>(n_rows));
  for (Eigen::Index j = 0; j < n_rows; ++j) {
    std::uint32_t key = 0;
    for (int k = 0; k < K; ++k) {
      if (g.entries(j, k) > 0) key |= (1u << k);
    }
    key_of_row[static_cast<std::size_t>(j)] = key;
    mm.row_of_key_[key] = static_cast<std::size_t>(j);
  }
  const std::uint32_t all = (1u << K) - 1u;
  mm.mirror_.resize(static_cast<std::size_t>(n_rows));
  for (std::size_t j = 0; j < mm.mirror_.size(); ++j) {
    mm.mirror_[j] = mm.row_of_key_[key_of_row[j] ^ all];
  }
  return mm;
}

inline ModelMatrix build_model_matrix(const DesignSpec& spec) {
  return expand_model_matrix(build_design_matrix(spec), spec.names());
}

/// Column index of an effect given by name, e.g. "AB" or "Quality:Bonus".
/// Single-character factor names may be concatenated; otherwise separate
/// factors with ':'.
inline std::size_t effect_index(const ModelMatrix& mm, std::string_view name) {
  const auto& names = mm.factor_names();
  std::vector<std::string> tokens;
  if (name.find(':') != std::string_view::npos) {
    std::size_t start = 0;
    while (start <= name.size()) {
      const auto stop = name.find(':', start);
      tokens.emplace_back(name.substr(start, stop == std::string_view::npos
                                                 ? std::string_view::npos
                                                 : stop - start));
      if (stop == std::string_view::npos) break;
      start = stop + 1;
    }
  } else if (std::find(names.begin(), names.end(), name) != names.end()) {
    tokens.emplace_back(name);
  } else {
    for (char c : name) tokens.emplace_back(1, c);
  }
  if (name.empty() || tokens.empty()) {
    fail(ErrorKind::Parse, "empty effect name");
  }

  std::uint32_t mask = 0;
  for (const auto& token : tokens) {
    const auto it = std::find(names.begin(), names.end(), token);
    if (it == names.end()) {
      fail(ErrorKind::Parse, "effect '" + std::string(name) +
                                 "' references unknown factor '" + token + "'");
    }
    const auto bit = 1u << static_cast<unsigned>(it - names.begin());
    if (mask & bit) {
      fail(ErrorKind::Parse, "effect '" + std::string(name) +
                                 "' repeats factor '" + token + "'");
    }
    mask |= bit;
  }
  return mm.column_of_mask(mask);
}

inline std::vector<std::size_t> effect_indices(const ModelMatrix& mm,
                                               const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(effect_index(mm, n));
  return out;
}

/// Tabular text: one row per treatment combination, one column per effect.
inline void write_model_matrix(std::ostream& os, const ModelMatrix& mm,
                               char delimiter = ',') {
  os << "combination";
  for (const auto& label : mm.labels()) os << delimiter << label;
  os << '\n';
  const auto rows = static_cast<std::size_t>(mm.entries().rows());
  for (std::size_t j = 0; j < rows; ++j) {
    os << (j + 1);
    for (std::size_t f = 0; f < mm.size(); ++f) {
      os << delimiter << (mm(j, f) > 0 ? "+1" : "-1");
    }
    os << '\n';
  }
}

}  // namespace rerand
