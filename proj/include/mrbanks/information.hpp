#pragma once

// Plug-in mutual information (in bits) over contingency tables, with the
// conditional variant, lagged self-information and resampling error bars.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mrbanks/core.hpp"
#include "mrbanks/rng.hpp"

namespace mrbanks {

// Counts between a condition variable (rows) and a decision (columns).
struct JointTable {
  std::vector<std::string> condition_labels;
  std::vector<std::string> decision_labels;
  std::vector<std::int64_t> counts;  // row-major, rows x cols

  JointTable() = default;
  JointTable(std::vector<std::string> rows, std::vector<std::string> cols)
      : condition_labels(std::move(rows)),
        decision_labels(std::move(cols)),
        counts(condition_labels.size() * decision_labels.size(), 0) {}

  static JointTable binary(std::string row0, std::string row1, std::string col0, std::string col1) {
    return JointTable({std::move(row0), std::move(row1)}, {std::move(col0), std::move(col1)});
  }

  std::size_t rows() const { return condition_labels.size(); }
  std::size_t cols() const { return decision_labels.size(); }

  std::int64_t& at(std::size_t r, std::size_t c) { return counts.at(r * cols() + c); }
  std::int64_t at(std::size_t r, std::size_t c) const { return counts.at(r * cols() + c); }

  void add(std::size_t r, std::size_t c, std::int64_t n = 1) { at(r, c) += n; }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  std::int64_t row_total(std::size_t r) const {
    std::int64_t t = 0;
    for (std::size_t c = 0; c < cols(); ++c) t += at(r, c);
    return t;
  }
  std::int64_t col_total(std::size_t c) const {
    std::int64_t t = 0;
    for (std::size_t r = 0; r < rows(); ++r) t += at(r, c);
    return t;
  }

  JointTable transposed() const {
    JointTable t(decision_labels, condition_labels);
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t c = 0; c < cols(); ++c) t.at(c, r) = at(r, c);
    return t;
  }
};

namespace detail {

// Plug-in MI of a flat rows x cols count block.
inline double plugin_mi(std::span<const std::int64_t> counts, std::size_t rows, std::size_t cols) {
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  if (total <= 0) return 0.0;
  std::vector<double> row(rows, 0.0), col(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      row[r] += static_cast<double>(counts[r * cols + c]);
      col[c] += static_cast<double>(counts[r * cols + c]);
    }
  const double n = static_cast<double>(total);
  double mi = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto k = static_cast<double>(counts[r * cols + c]);
      if (k == 0.0) continue;  // 0 log 0 = 0
      mi += (k / n) * std::log2(k * n / (row[r] * col[c]));
    }
  return mi < 0.0 ? 0.0 : mi;  // clamp rounding noise
}

inline int nonzero(std::span<const double> v) {
  int k = 0;
  for (double x : v)
    if (x > 0) ++k;
  return k;
}

}  // namespace detail

enum class BiasCorrection : std::uint8_t { none, miller_madow };

inline double mutual_information(const JointTable& t, BiasCorrection correction = BiasCorrection::none) {
  const auto total = t.total();
  if (total <= 0) fail(ErrorCode::empty_sample, "mutual information of an empty table");
  double mi = detail::plugin_mi(t.counts, t.rows(), t.cols());
  if (correction == BiasCorrection::miller_madow) {
    std::vector<double> row(t.rows()), col(t.cols()), cell(t.counts.begin(), t.counts.end());
    for (std::size_t r = 0; r < t.rows(); ++r) row[r] = static_cast<double>(t.row_total(r));
    for (std::size_t c = 0; c < t.cols(); ++c) col[c] = static_cast<double>(t.col_total(c));
    const int k_xy = detail::nonzero(cell), k_x = detail::nonzero(row), k_y = detail::nonzero(col);
    mi -= static_cast<double>(k_xy - k_x - k_y + 1) /
          (2.0 * static_cast<double>(total) * std::numbers::ln2);
  }
  return mi;
}

// Expected plug-in bias under independence: (k-1)(l-1) / (2 N ln 2).
inline double independence_bias_bound(const JointTable& t) {
  const auto n = t.total();
  if (n <= 0) fail(ErrorCode::empty_sample, "bias bound of an empty table");
  return static_cast<double>((t.rows() - 1) * (t.cols() - 1)) /
         (2.0 * static_cast<double>(n) * std::numbers::ln2);
}

// Leave-one-out jackknife standard deviation of the plug-in estimate.
// Deleting any observation from cell (r, c) gives the same replicate, so the
// sum runs over cells weighted by their counts.
inline double jackknife_sd(const JointTable& t) {
  const auto total = t.total();
  if (total < 2) fail(ErrorCode::empty_sample, "jackknife needs at least 2 observations");
  std::vector<std::int64_t> work = t.counts;
  std::vector<double> reps(work.size(), 0.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < work.size(); ++i) {
    if (work[i] == 0) continue;
    --work[i];
    reps[i] = detail::plugin_mi(work, t.rows(), t.cols());
    ++work[i];
    mean += static_cast<double>(work[i]) * reps[i];
  }
  const double n = static_cast<double>(total);
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < work.size(); ++i)
    if (work[i] > 0) ss += static_cast<double>(work[i]) * (reps[i] - mean) * (reps[i] - mean);
  return std::sqrt((n - 1.0) / n * ss);
}

struct StratumInformation {
  std::string label;
  double weight = 0.0;  // p(given = label)
  double bits = 0.0;
  std::int64_t n = 0;
  bool degenerate = false;  // empty or a constant variable; contributes 0
};

struct ConditionalInformation {
  double bits = 0.0;
  std::vector<StratumInformation> strata;

  std::size_t degenerate_count() const {
    std::size_t k = 0;
    for (const auto& s : strata)
      if (s.degenerate) ++k;
    return k;
  }
};

// I(X; Y | Z) = sum_z p(z) I(X; Y | Z = z), one table per stratum of Z.
inline ConditionalInformation conditional_mutual_information(std::span<const JointTable> strata,
                                                             std::span<const std::string> labels = {}) {
  std::int64_t total = 0;
  for (const auto& t : strata) total += t.total();
  if (total <= 0) fail(ErrorCode::empty_sample, "conditional information of empty strata");
  ConditionalInformation out;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    const auto& t = strata[i];
    StratumInformation s;
    s.label = i < labels.size() ? labels[i] : std::to_string(i);
    s.n = t.total();
    s.weight = static_cast<double>(s.n) / static_cast<double>(total);
    int live_rows = 0, live_cols = 0;
    for (std::size_t r = 0; r < t.rows(); ++r) live_rows += t.row_total(r) > 0;
    for (std::size_t c = 0; c < t.cols(); ++c) live_cols += t.col_total(c) > 0;
    s.degenerate = s.n == 0 || live_rows < 2 || live_cols < 2;
    s.bits = s.n > 0 ? mutual_information(t) : 0.0;
    out.bits += s.weight * s.bits;
    out.strata.push_back(std::move(s));
  }
  return out;
}

// Pairs (x[t - lag], x[t]) from one sequence, accumulated into `table`
// (rows: earlier symbol, cols: later symbol; up = 0, down = 1).
inline void add_lagged_pairs(std::span<const Direction> seq, std::size_t lag, JointTable& table) {
  if (lag == 0) fail(ErrorCode::invalid_argument, "lag must be positive");
  for (std::size_t t = lag; t < seq.size(); ++t)
    table.add(static_cast<std::size_t>(seq[t - lag]), static_cast<std::size_t>(seq[t]));
}

inline JointTable lagged_table(std::span<const Direction> seq, std::size_t lag = 1) {
  auto table = JointTable::binary("up", "down", "up", "down");
  add_lagged_pairs(seq, lag, table);
  return table;
}

inline double lagged_self_information(std::span<const Direction> seq, std::size_t lag = 1) {
  if (seq.size() < lag + 1) fail(ErrorCode::too_short, "sequence shorter than lag + 1");
  return mutual_information(lagged_table(seq, lag));
}

// Multinomial resampling of a flat count vector: draws `resamples` tables of
// the same total, evaluates `stat` on each and returns the sample sd.
template <class Stat>
double bootstrap_sd(std::span<const std::int64_t> counts, Stat&& stat, int resamples, std::uint64_t seed) {
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  if (total <= 0) fail(ErrorCode::empty_sample, "bootstrap of empty counts");
  if (resamples < 2) fail(ErrorCode::invalid_argument, "need at least 2 resamples");
  auto eng = rng::make_engine(seed);
  std::vector<std::int64_t> draw(counts.size());
  double sum = 0.0, sum_sq = 0.0;
  for (int b = 0; b < resamples; ++b) {
    std::int64_t left = total;
    double mass_left = 1.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double p = static_cast<double>(counts[i]) / static_cast<double>(total);
      if (i + 1 == counts.size() || mass_left <= 0.0) {
        draw[i] = i + 1 == counts.size() ? left : 0;
      } else {
        draw[i] = rng::binomial(eng, left, std::min(1.0, p / mass_left));
      }
      left -= draw[i];
      mass_left -= p;
    }
    const double v = stat(std::span<const std::int64_t>(draw));
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(resamples);
  const double var = (sum_sq - sum * sum / n) / (n - 1.0);
  return var > 0.0 ? std::sqrt(var) : 0.0;
}

inline constexpr int kDefaultBootstrapResamples = 1000;

inline double bootstrap_mi_sd(const JointTable& t, int resamples = kDefaultBootstrapResamples,
                              std::uint64_t seed = 0) {
  const auto rows = t.rows(), cols = t.cols();
  return bootstrap_sd(
      t.counts, [&](std::span<const std::int64_t> c) { return detail::plugin_mi(c, rows, cols); },
      resamples, seed);
}

// Bootstrap sd of I(X; Y | Z) over equally shaped strata.
inline double bootstrap_cmi_sd(std::span<const JointTable> strata,
                               int resamples = kDefaultBootstrapResamples, std::uint64_t seed = 0) {
  if (strata.empty()) fail(ErrorCode::empty_sample, "no strata");
  const auto rows = strata.front().rows(), cols = strata.front().cols();
  const auto block = rows * cols;
  std::vector<std::int64_t> flat;
  for (const auto& t : strata) flat.insert(flat.end(), t.counts.begin(), t.counts.end());
  return bootstrap_sd(
      flat,
      [&](std::span<const std::int64_t> c) {
        std::int64_t total = 0;
        for (auto x : c) total += x;
        double bits = 0.0;
        for (std::size_t s = 0; s < strata.size(); ++s) {
          auto part = c.subspan(s * block, block);
          std::int64_t n = 0;
          for (auto x : part) n += x;
          if (n > 0)
            bits += static_cast<double>(n) / static_cast<double>(total) * detail::plugin_mi(part, rows, cols);
        }
        return bits;
      },
      resamples, seed);
}

// Binary entropy in bits.
inline double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

}  // namespace mrbanks
