#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace ctcdrive::eval {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_tokens = 0;

  std::size_t edits() const { return substitutions + insertions + deletions; }
  /// Edits over reference length, with an empty reference counted as length 1.
  double rate() const {
    return static_cast<double>(edits()) / static_cast<double>(std::max<std::size_t>(1, reference_tokens));
  }
  EditCounts& operator+=(const EditCounts& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    reference_tokens += o.reference_tokens;
    return *this;
  }
};

/// Unit-cost Levenshtein alignment of hyp against ref. Among optimal
/// alignments the backtrace prefers match/substitution, then deletion,
/// then insertion.
inline EditCounts wer(std::span<const int> hyp, std::span<const int> ref) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]), at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditCounts c;
  c.reference_tokens = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1])) {
      c.substitutions += ref[i - 1] != hyp[j - 1];
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

}  // namespace ctcdrive::eval
