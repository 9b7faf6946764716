#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "gdmsr/common.hpp"

namespace gdmsr {

// Compressed sparse rows over int32 column ids. Rows are kept sorted so
// membership tests can use binary search.
struct Csr {
  int64_t n_rows = 0;
  int64_t n_cols = 0;
  std::vector<int64_t> offsets;  // n_rows + 1, monotone
  std::vector<int32_t> indices;

  Csr() = default;
  Csr(int64_t rows, int64_t cols) : n_rows(rows), n_cols(cols), offsets(rows + 1, 0) {}

  int64_t n_edges() const { return static_cast<int64_t>(indices.size()); }
  int64_t degree(int64_t r) const { return offsets[r + 1] - offsets[r]; }

  std::span<const int32_t> row(int64_t r) const {
    return {indices.data() + offsets[r], static_cast<size_t>(degree(r))};
  }

  bool contains(int64_t r, int32_t c) const {
    const auto rw = row(r);
    return std::binary_search(rw.begin(), rw.end(), c);
  }

  static Csr from_pairs(int64_t n_rows, int64_t n_cols,
                        std::span<const std::pair<int32_t, int32_t>> pairs) {
    Csr out(n_rows, n_cols);
    for (const auto& [r, c] : pairs) {
      check(r >= 0 && r < n_rows && c >= 0 && c < n_cols, "Csr::from_pairs: pair (", r, ",", c,
            ") out of range ", n_rows, "x", n_cols);
      out.offsets[r + 1]++;
    }
    for (int64_t r = 0; r < n_rows; ++r) out.offsets[r + 1] += out.offsets[r];
    out.indices.resize(pairs.size());
    std::vector<int64_t> cursor(out.offsets.begin(), out.offsets.end() - 1);
    for (const auto& [r, c] : pairs) out.indices[static_cast<size_t>(cursor[r]++)] = c;
    for (int64_t r = 0; r < n_rows; ++r)
      std::sort(out.indices.begin() + out.offsets[r], out.indices.begin() + out.offsets[r + 1]);
    return out;
  }

  std::vector<std::pair<int32_t, int32_t>> to_pairs() const {
    std::vector<std::pair<int32_t, int32_t>> out;
    out.reserve(indices.size());
    for (int64_t r = 0; r < n_rows; ++r)
      for (int32_t c : row(r)) out.emplace_back(static_cast<int32_t>(r), c);
    return out;
  }
};

}  // namespace gdmsr
