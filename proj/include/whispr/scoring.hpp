// whispr/scoring.hpp
//
// Levenshtein alignment with an S/I/D breakdown, aggregate error rates
// (PER/CER share the machinery) and report output.

#pragma once

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "whispr/common.hpp"

namespace whispr {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t total = 0;

  bool operator==(const EditCounts&) const = default;
};

/// Minimal unit-cost edits turning `ref` into `hyp`; the breakdown follows
/// one optimal backtrace preferring substitution, then deletion, then
/// insertion.
template <typename Sym>
EditCounts edit_distance(const std::vector<Sym>& ref, const std::vector<Sym>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  EditCounts c;
  c.total = d[n][m];
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (d[i][j] == d[i - 1][j - 1] + (same ? 0 : 1)) {
        if (!same) ++c.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

struct ScoreRow {
  std::string id;
  std::size_t ref_len = 0;
  EditCounts edits;
};

struct ScoreReport {
  std::vector<ScoreRow> rows;
  std::string model, dataset, decode_settings;
  std::string metric = "CER";

  std::size_t total_edits() const {
    std::size_t s = 0;
    for (const auto& r : rows) s += r.edits.total;
    return s;
  }
  std::size_t total_ref() const {
    std::size_t s = 0;
    for (const auto& r : rows) s += r.ref_len;
    return s;
  }
};

/// 100 * sum(edits) / sum(reference length); may exceed 100.
inline double error_rate(const std::vector<ScoreRow>& rows) {
  std::size_t edits = 0, ref = 0;
  for (const auto& r : rows) {
    edits += r.edits.total;
    ref += r.ref_len;
  }
  if (ref == 0) throw RuntimeError("error_rate: total reference length is zero");
  return 100.0 * static_cast<double>(edits) / static_cast<double>(ref);
}

inline double relative_reduction(double baseline_pct, double new_pct) {
  if (!(baseline_pct > 0.0)) throw ConfigError("relative_reduction: baseline must be positive");
  return 100.0 * (baseline_pct - new_pct) / baseline_pct;
}

/// CSV: id, ref_len, sub, ins, del, err; final row holds the aggregates.
inline void write_report_csv(std::ostream& os, const ScoreReport& rep) {
  os << "id,ref_len,sub,ins,del,err\n";
  EditCounts sum;
  for (const auto& r : rep.rows) {
    os << r.id << ',' << r.ref_len << ',' << r.edits.substitutions << ',' << r.edits.insertions << ','
       << r.edits.deletions << ',' << r.edits.total << '\n';
    sum.substitutions += r.edits.substitutions;
    sum.insertions += r.edits.insertions;
    sum.deletions += r.edits.deletions;
    sum.total += r.edits.total;
  }
  os << "TOTAL," << rep.total_ref() << ',' << sum.substitutions << ',' << sum.insertions << ',' << sum.deletions
     << ',' << sum.total << '\n';
}

inline void write_report_table(std::ostream& os, const ScoreReport& rep) {
  if (!rep.model.empty()) os << "model:   " << rep.model << '\n';
  if (!rep.dataset.empty()) os << "dataset: " << rep.dataset << '\n';
  if (!rep.decode_settings.empty()) os << "decode:  " << rep.decode_settings << '\n';
  EditCounts sum;
  for (const auto& r : rep.rows) {
    sum.substitutions += r.edits.substitutions;
    sum.insertions += r.edits.insertions;
    sum.deletions += r.edits.deletions;
    sum.total += r.edits.total;
  }
  os << std::fixed << std::setprecision(2) << error_rate(rep.rows) << "% " << rep.metric << " [ " << sum.total
     << " / " << rep.total_ref() << ", " << sum.insertions << " ins, " << sum.deletions << " del, "
     << sum.substitutions << " sub ] over " << rep.rows.size() << " utterances\n";
  os.unsetf(std::ios::floatfield);
}

}  // namespace whispr
