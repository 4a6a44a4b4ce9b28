#pragma once

#include <algorithm>

#include <stdexcept>
#include <string>
#include <vector>

namespace nsesum {

// Precision / recall / F1 for one ROUGE variant. Tokens are compared as
// exact lowercase strings: no stemming, no stopword removal.
struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline RougeScore make_rouge(double p, double r) {
  RougeScore s;
  s.precision = p;
  s.recall = r;
  s.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
  return s;
}

using TokenList = std::vector<std::string>;

namespace rouge_detail {

// Shared scratch for one reference/candidate pair: tokens mapped to dense
// first-occurrence ids, so n-grams count into plain integer arrays and the
// LCS table compares ints. Keeps per-call allocation out of scoring loops.
struct PairIds {
  std::vector<int> rid, cid;
  size_t vocab = 0;
};

inline PairIds& map_ids(const TokenList& reference, const TokenList& candidate) {
  thread_local PairIds ids;
  thread_local std::vector<const std::string*> seen;
  seen.clear();
  ids.rid.clear();
  ids.cid.clear();
  auto id_of = [&](const std::string& t) {
    for (size_t k = 0; k < seen.size(); ++k)
      if (*seen[k] == t) return static_cast<int>(k);
    seen.push_back(&t);
    return static_cast<int>(seen.size()) - 1;
  };
  for (const auto& t : reference) ids.rid.push_back(id_of(t));
  for (const auto& t : candidate) ids.cid.push_back(id_of(t));
  ids.vocab = seen.size();
  return ids;
}

inline RougeScore rouge_n_ids(const PairIds& ids, int n) {
  const long long ref_total = static_cast<long long>(ids.rid.size()) - n + 1;
  const long long cand_total = static_cast<long long>(ids.cid.size()) - n + 1;
  if (ref_total <= 0 || cand_total <= 0) return RougeScore{};
  const size_t K = ids.vocab;
  thread_local std::vector<int> rc, cc;

  long long overlap = 0;
  if (n == 1) {
    rc.assign(K, 0);
    cc.assign(K, 0);
    for (int id : ids.rid) ++rc[static_cast<size_t>(id)];
    for (int id : ids.cid) ++cc[static_cast<size_t>(id)];
    for (size_t k = 0; k < K; ++k) overlap += std::min(rc[k], cc[k]);
  } else {
    rc.assign(K * K, 0);
    cc.assign(K * K, 0);
    for (size_t i = 0; i + 1 < ids.rid.size(); ++i)
      ++rc[static_cast<size_t>(ids.rid[i]) * K + ids.rid[i + 1]];
    for (size_t i = 0; i + 1 < ids.cid.size(); ++i)
      ++cc[static_cast<size_t>(ids.cid[i]) * K + ids.cid[i + 1]];
    for (size_t i = 0; i + 1 < ids.cid.size(); ++i) {
      const size_t code = static_cast<size_t>(ids.cid[i]) * K + ids.cid[i + 1];
      if (cc[code] > 0) {
        overlap += std::min(rc[code], cc[code]);
        cc[code] = 0;  // count each distinct bigram once
      }
    }
  }
  return make_rouge(static_cast<double>(overlap) / cand_total,
                    static_cast<double>(overlap) / ref_total);
}

inline int lcs_ids(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  thread_local std::vector<int> prev, cur;
  prev.assign(m + 1, 0);
  cur.assign(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    const int ai = a[i - 1];
    for (size_t j = 1; j <= m; ++j)
      cur[j] = (ai == b[j - 1]) ? prev[j - 1] + 1
                                : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[m];
}

inline RougeScore rouge_l_ids(const PairIds& ids) {
  if (ids.rid.empty() || ids.cid.empty()) return RougeScore{};
  const double lcs = lcs_ids(ids.rid, ids.cid);
  return make_rouge(lcs / ids.cid.size(), lcs / ids.rid.size());
}

}  // namespace rouge_detail

// Clipped n-gram overlap F1, n in {1, 2}.
inline RougeScore rouge_n(const TokenList& reference, const TokenList& candidate,
                          int n) {
  if (n != 1 && n != 2) throw std::invalid_argument("rouge_n: n must be 1 or 2");
  return rouge_detail::rouge_n_ids(rouge_detail::map_ids(reference, candidate),
                                   n);
}

inline int lcs_length(const TokenList& a, const TokenList& b) {
  const rouge_detail::PairIds& ids = rouge_detail::map_ids(a, b);
  return rouge_detail::lcs_ids(ids.rid, ids.cid);
}

// Longest-common-subsequence F1 over flat token sequences.
inline RougeScore rouge_l(const TokenList& reference,
                          const TokenList& candidate) {
  return rouge_detail::rouge_l_ids(rouge_detail::map_ids(reference, candidate));
}

struct RougeReport {
  RougeScore rouge1;
  RougeScore rouge2;
  RougeScore rougeL;
};

// All three variants with a single token-to-id pass per pair.
inline RougeReport score_pair(const TokenList& reference,
                              const TokenList& candidate) {
  const rouge_detail::PairIds& ids = rouge_detail::map_ids(reference, candidate);
  return {rouge_detail::rouge_n_ids(ids, 1), rouge_detail::rouge_n_ids(ids, 2),
          rouge_detail::rouge_l_ids(ids)};
}

// Arithmetic mean of per-pair scores.
inline RougeReport corpus_rouge(
    const std::vector<std::pair<TokenList, TokenList>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("corpus_rouge: empty list");
  RougeReport acc;
  auto accumulate = [](RougeScore& into, const RougeScore& s) {
    into.precision += s.precision;
    into.recall += s.recall;
    into.f1 += s.f1;
  };
  for (const auto& [ref, cand] : pairs) {
    const RougeReport r = score_pair(ref, cand);
    accumulate(acc.rouge1, r.rouge1);
    accumulate(acc.rouge2, r.rouge2);
    accumulate(acc.rougeL, r.rougeL);
  }
  const double n = static_cast<double>(pairs.size());
  for (RougeScore* s : {&acc.rouge1, &acc.rouge2, &acc.rougeL}) {
    s->precision /= n;
    s->recall /= n;
    s->f1 /= n;
  }
  return acc;
}

}  // namespace nsesum
