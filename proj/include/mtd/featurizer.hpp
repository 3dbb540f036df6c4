#pragma once

// Entity-marked sentences to signed, hashed, L2-normalized sparse vectors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtd/error.hpp"
#include "mtd/random.hpp"

namespace mtd {

inline constexpr std::string_view kSubjMarker = "[E1]";
inline constexpr std::string_view kObjMarker = "[E2]";
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";

inline constexpr std::size_t kDefaultFeatureDim = std::size_t{1} << 18;
inline constexpr std::size_t kMinFeatureDim = std::size_t{1} << 10;

// Token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start; }
  bool overlaps(const Span& o) const noexcept { return start < o.end && o.start < end; }
  bool operator==(const Span&) const = default;
};

struct Instance {
  std::string id;
  std::vector<std::string> tokens;
  Span subj;
  Span obj;
  std::optional<std::size_t> relation;

  bool operator==(const Instance&) const = default;
};

struct FeatureVector {
  std::vector<std::uint32_t> indices;  // strictly increasing, all < dim
  std::vector<double> values;
  std::size_t dim = 0;

  std::size_t nnz() const noexcept { return indices.size(); }
  bool operator==(const FeatureVector&) const = default;
};

inline bool is_reserved_token(std::string_view tok) {
  return tok == kSubjMarker || tok == kObjMarker || tok == kClsToken || tok == kSepToken;
}

// Throws InvalidArgument describing the first violated Instance invariant.
inline void validate_instance(const Instance& inst, std::optional<std::size_t> num_relations = {}) {
  const auto n = inst.tokens.size();
  auto check_span = [&](const Span& s, const char* name) {
    if (!(s.start < s.end && s.end <= n)) {
      throw InvalidArgument("instance '" + inst.id + "': " + name + " span [" +
                            std::to_string(s.start) + ", " + std::to_string(s.end) +
                            ") is invalid for " + std::to_string(n) + " tokens");
    }
  };
  check_span(inst.subj, "subject");
  check_span(inst.obj, "object");
  if (inst.subj.overlaps(inst.obj)) {
    throw InvalidArgument("instance '" + inst.id + "': subject and object spans overlap");
  }
  for (const auto& tok : inst.tokens) {
    if (is_reserved_token(tok)) {
      throw InvalidArgument("instance '" + inst.id + "': token '" + tok +
                            "' is a reserved marker (was the sentence already marked?)");
    }
  }
  if (num_relations && inst.relation && *inst.relation >= *num_relations) {
    throw InvalidArgument("instance '" + inst.id + "': relation index out of range");
  }
}

// [CLS] ... [E1] subj [E1] ... [E2] obj [E2] ... [SEP]
inline std::vector<std::string> insert_markers(const Instance& inst) {
  validate_instance(inst);
  std::vector<std::string> out;
  out.reserve(inst.tokens.size() + 6);
  out.emplace_back(kClsToken);
  for (std::size_t i = 0; i < inst.tokens.size(); ++i) {
    if (i == inst.subj.start) out.emplace_back(kSubjMarker);
    if (i == inst.obj.start) out.emplace_back(kObjMarker);
    out.push_back(inst.tokens[i]);
    if (i + 1 == inst.subj.end) out.emplace_back(kSubjMarker);
    if (i + 1 == inst.obj.end) out.emplace_back(kObjMarker);
  }
  out.emplace_back(kSepToken);
  return out;
}

// Seeded 64-bit FNV-1a with a splitmix finalizer. Stable across platforms.
inline std::uint64_t stable_hash(std::string_view s, std::uint64_t seed) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ mix64(seed);
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

// Bucket label for the number of tokens strictly between the two spans.
inline std::string_view distance_bucket(std::size_t gap) noexcept {
  if (gap == 0) return "0";
  if (gap == 1) return "1";
  if (gap == 2) return "2";
  if (gap <= 5) return "3-5";
  if (gap <= 10) return "6-10";
  return ">10";
}

// Raw feature template strings for an instance, in emission order (duplicates kept).
inline std::vector<std::string> feature_templates(const Instance& inst) {
  const auto marked = insert_markers(inst);
  std::vector<std::string> feats;
  feats.reserve(marked.size() * 3 + 16);

  for (const auto& tok : marked) feats.push_back("u|" + tok);
  for (std::size_t i = 0; i + 1 < marked.size(); ++i) {
    feats.push_back("b|" + marked[i] + "|" + marked[i + 1]);
  }
  for (std::size_t i = inst.subj.start; i < inst.subj.end; ++i) feats.push_back("e1|" + inst.tokens[i]);
  for (std::size_t i = inst.obj.start; i < inst.obj.end; ++i) feats.push_back("e2|" + inst.tokens[i]);

  // Width-2 windows on either side of every marker occurrence. Opening and
  // closing markers are told apart by occurrence order.
  std::array<int, 2> seen{0, 0};
  for (std::size_t p = 0; p < marked.size(); ++p) {
    const bool subj = marked[p] == kSubjMarker;
    if (!subj && marked[p] != kObjMarker) continue;
    const int which = subj ? 0 : 1;
    const std::string tag = std::string(subj ? "E1" : "E2") + (seen[which]++ == 0 ? "o" : "c");
    for (int off = -2; off <= 2; ++off) {
      if (off == 0) continue;
      const auto q = static_cast<std::ptrdiff_t>(p) + off;
      if (q < 0 || q >= static_cast<std::ptrdiff_t>(marked.size())) continue;
      feats.push_back("w|" + tag + "|" + std::to_string(off) + "|" + marked[static_cast<std::size_t>(q)]);
    }
  }

  const bool subj_first = inst.subj.start < inst.obj.start;
  const Span& first = subj_first ? inst.subj : inst.obj;
  const Span& second = subj_first ? inst.obj : inst.subj;
  feats.push_back("dist|" + std::string(distance_bucket(second.start - first.end)));
  feats.emplace_back(subj_first ? "order|subj_first" : "order|obj_first");
  return feats;
}

inline bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

inline FeatureVector featurize(const Instance& inst, std::size_t dim = kDefaultFeatureDim,
                               std::uint64_t seed = 0) {
  if (!is_power_of_two(dim)) {
    throw InvalidArgument("featurize: dim " + std::to_string(dim) + " is not a power of two");
  }
  if (dim < kMinFeatureDim) throw InvalidArgument("featurize: dim must be at least 1024");
  if (dim > (std::size_t{1} << 32)) throw InvalidArgument("featurize: dim exceeds 2^32");

  const std::uint64_t sign_seed = derive_seed(seed, 0x5167);
  std::vector<std::pair<std::uint32_t, double>> entries;
  for (const auto& f : feature_templates(inst)) {
    const auto idx = static_cast<std::uint32_t>(stable_hash(f, seed) & (dim - 1));
    const double sign = (stable_hash(f, sign_seed) & 1U) ? 1.0 : -1.0;
    entries.emplace_back(idx, sign);
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  FeatureVector out;
  out.dim = dim;
  for (std::size_t i = 0; i < entries.size();) {
    double v = 0.0;
    std::size_t j = i;
    for (; j < entries.size() && entries[j].first == entries[i].first; ++j) v += entries[j].second;
    if (v != 0.0) {
      out.indices.push_back(entries[i].first);
      out.values.push_back(v);
    }
    i = j;
  }
  double norm = 0.0;
  for (double v : out.values) norm += v * v;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& v : out.values) v /= norm;
  }
  return out;
}

}  // namespace mtd
