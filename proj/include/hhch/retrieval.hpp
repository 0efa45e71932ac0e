#pragma once

// Binarization and Hamming-ranking evaluation.
//
// Conventions:
//  - ties at equal Hamming distance rank by ascending database index;
//  - AP@K divides by min(#relevant in database, K) and is 0 for queries with
//    no relevant item;
//  - relevance means the two label sets intersect.

#include "hhch/core.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hhch {

using LabelSet = std::vector<std::int64_t>;  // sorted, unique

class BinaryCode {
 public:
  BinaryCode() = default;
  explicit BinaryCode(std::size_t bits) : bits_(bits), words_((bits + 63) / 64, 0) {}

  std::size_t size() const noexcept { return bits_; }
  const std::vector<std::uint64_t>& words() const noexcept { return words_; }
  std::vector<std::uint64_t>& words() noexcept { return words_; }

  // +1 or -1
  int operator[](std::size_t k) const { return (words_[k / 64] >> (k % 64)) & 1u ? 1 : -1; }

  void set(std::size_t k, bool positive) {
    const std::uint64_t mask = std::uint64_t{1} << (k % 64);
    if (positive) {
      words_[k / 64] |= mask;
    } else {
      words_[k / 64] &= ~mask;
    }
  }

  friend bool operator==(const BinaryCode&, const BinaryCode&) = default;

 private:
  std::size_t bits_ = 0;
  std::vector<std::uint64_t> words_;
};

// -1 if h_k <= 0, +1 otherwise.
inline BinaryCode binarize(std::span<const double> code) {
  BinaryCode out(code.size());
  for (std::size_t k = 0; k < code.size(); ++k) out.set(k, code[k] > 0.0);
  return out;
}

inline std::vector<BinaryCode> binarize_rows(const RowMatrix& codes) {
  std::vector<BinaryCode> out;
  out.reserve(static_cast<std::size_t>(codes.rows()));
  for (Eigen::Index i = 0; i < codes.rows(); ++i) {
    out.push_back(binarize({codes.row(i).data(), static_cast<std::size_t>(codes.cols())}));
  }
  return out;
}

inline std::size_t hamming_distance(const BinaryCode& a, const BinaryCode& b) {
  detail::require(a.size() == b.size(), "hamming_distance: code lengths differ");
  std::size_t d = 0;
  for (std::size_t w = 0; w < a.words().size(); ++w) d += std::popcount(a.words()[w] ^ b.words()[w]);
  return d;
}

inline bool relevant(const LabelSet& a, const LabelSet& b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

struct RetrievalSet {
  std::vector<BinaryCode> query_codes;
  std::vector<LabelSet> query_labels;
  std::vector<BinaryCode> db_codes;
  std::vector<LabelSet> db_labels;

  std::size_t bits() const { return query_codes.empty() ? 0 : query_codes.front().size(); }

  void validate() const {
    detail::require(query_codes.size() == query_labels.size(), "retrieval: query codes/labels count mismatch");
    detail::require(db_codes.size() == db_labels.size(), "retrieval: database codes/labels count mismatch");
    detail::require(!query_codes.empty() && !db_codes.empty(), "retrieval: empty query or database");
    const std::size_t K = query_codes.front().size();
    for (const auto& c : query_codes) detail::require(c.size() == K, "retrieval: query code lengths differ");
    for (const auto& c : db_codes) {
      detail::require(c.size() == K, "retrieval: query and database code lengths differ");
    }
  }
};

struct RankedQuery {
  std::vector<std::size_t> order;     // database indices, best first
  std::vector<std::size_t> distance;  // Hamming distance per database index
  std::vector<char> relevant;         // relevance per database index
  std::size_t total_relevant = 0;
};

// Stable counting sort by Hamming distance, so equal distances keep ascending
// database index order.
inline RankedQuery rank_query(const RetrievalSet& set, std::size_t q) {
  const std::size_t K = set.bits();
  const std::size_t n = set.db_codes.size();
  RankedQuery r;
  r.distance.resize(n);
  r.relevant.resize(n);
  std::vector<std::size_t> bucket(K + 2, 0);
  for (std::size_t d = 0; d < n; ++d) {
    r.distance[d] = hamming_distance(set.query_codes[q], set.db_codes[d]);
    r.relevant[d] = relevant(set.query_labels[q], set.db_labels[d]) ? 1 : 0;
    r.total_relevant += static_cast<std::size_t>(r.relevant[d]);
    ++bucket[r.distance[d] + 1];
  }
  for (std::size_t k = 1; k < bucket.size(); ++k) bucket[k] += bucket[k - 1];
  r.order.resize(n);
  for (std::size_t d = 0; d < n; ++d) r.order[bucket[r.distance[d]]++] = d;
  return r;
}

inline double average_precision_at_k(const RankedQuery& r, std::size_t top_k) {
  if (r.total_relevant == 0) return 0.0;
  const std::size_t depth = std::min(top_k, r.order.size());
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < depth; ++rank) {
    if (r.relevant[r.order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(std::min(r.total_relevant, top_k));
}

inline double map_at_k(const RetrievalSet& set, std::size_t top_k) {
  set.validate();
  detail::require(top_k >= 1, "mAP cutoff must be positive");
  double sum = 0.0;
  for (std::size_t q = 0; q < set.query_codes.size(); ++q) sum += average_precision_at_k(rank_query(set, q), top_k);
  return sum / static_cast<double>(set.query_codes.size());
}

// Mean precision over the top N ranked items; N beyond the database size is
// clipped to it.
inline std::vector<double> precision_at_n(const RetrievalSet& set, std::span<const std::size_t> ns) {
  set.validate();
  std::vector<double> out(ns.size(), 0.0);
  for (std::size_t q = 0; q < set.query_codes.size(); ++q) {
    const auto r = rank_query(set, q);
    for (std::size_t t = 0; t < ns.size(); ++t) {
      detail::require(ns[t] >= 1, "P@N requires N >= 1");
      const std::size_t depth = std::min(ns[t], r.order.size());
      std::size_t hits = 0;
      for (std::size_t rank = 0; rank < depth; ++rank) hits += static_cast<std::size_t>(r.relevant[r.order[rank]]);
      out[t] += static_cast<double>(hits) / static_cast<double>(depth);
    }
  }
  for (auto& v : out) v /= static_cast<double>(set.query_codes.size());
  return out;
}

// Mean precision among database items within Hamming radius 2; a query whose
// radius-2 ball is empty contributes 0.
inline double precision_at_radius2(const RetrievalSet& set, std::size_t radius = 2) {
  set.validate();
  double sum = 0.0;
  for (std::size_t q = 0; q < set.query_codes.size(); ++q) {
    std::size_t inside = 0, hits = 0;
    for (std::size_t d = 0; d < set.db_codes.size(); ++d) {
      if (hamming_distance(set.query_codes[q], set.db_codes[d]) <= radius) {
        ++inside;
        hits += relevant(set.query_labels[q], set.db_labels[d]) ? 1 : 0;
      }
    }
    if (inside > 0) sum += static_cast<double>(hits) / static_cast<double>(inside);
  }
  return sum / static_cast<double>(set.query_codes.size());
}

struct PrPoint {
  std::size_t radius = 0;
  double precision = 0.0;
  double recall = 0.0;
};

// Precision and recall of "retrieve everything within radius t", pooled over
// all queries, for t = 0..K. Precision is 0 where nothing is retrieved.
inline std::vector<PrPoint> pr_curve(const RetrievalSet& set) {
  set.validate();
  const std::size_t K = set.bits();
  std::vector<double> retrieved(K + 1, 0.0), hits(K + 1, 0.0);
  double total_relevant = 0.0;
  for (std::size_t q = 0; q < set.query_codes.size(); ++q) {
    for (std::size_t d = 0; d < set.db_codes.size(); ++d) {
      const std::size_t dist = hamming_distance(set.query_codes[q], set.db_codes[d]);
      const bool rel = relevant(set.query_labels[q], set.db_labels[d]);
      retrieved[dist] += 1.0;
      hits[dist] += rel ? 1.0 : 0.0;
      total_relevant += rel ? 1.0 : 0.0;
    }
  }
  std::vector<PrPoint> out;
  double cum_retrieved = 0.0, cum_hits = 0.0;
  for (std::size_t t = 0; t <= K; ++t) {
    cum_retrieved += retrieved[t];
    cum_hits += hits[t];
    out.push_back({t, cum_retrieved > 0.0 ? cum_hits / cum_retrieved : 0.0,
                   total_relevant > 0.0 ? cum_hits / total_relevant : 0.0});
  }
  return out;
}

struct ClassDistances {
  double intra = 0.0;
  double inter = 0.0;
};

// Mean Hamming distance over unordered same-class and different-class pairs.
inline ClassDistances intra_inter_distances(std::span<const BinaryCode> codes, std::span<const LabelSet> labels) {
  detail::require(codes.size() == labels.size(), "intra/inter: codes/labels count mismatch");
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (std::size_t j = i + 1; j < codes.size(); ++j) {
      const auto d = static_cast<double>(hamming_distance(codes[i], codes[j]));
      if (relevant(labels[i], labels[j])) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  }
  return {n_intra ? intra / static_cast<double>(n_intra) : 0.0, n_inter ? inter / static_cast<double>(n_inter) : 0.0};
}

// Evaluated over the database side of the set.
inline ClassDistances intra_inter_distances(const RetrievalSet& set) {
  set.validate();
  return intra_inter_distances(set.db_codes, set.db_labels);
}

}  // namespace hhch
