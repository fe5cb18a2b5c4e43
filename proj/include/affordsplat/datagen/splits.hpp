#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/core/rng.hpp"

namespace affordsplat::datagen {

enum class SplitMode { Seen, Unseen };

inline const char* split_mode_name(SplitMode m) {
  return m == SplitMode::Seen ? "Seen" : "Unseen";
}

inline SplitMode parse_split_mode(const std::string& s) {
  if (s == "Seen" || s == "seen") return SplitMode::Seen;
  if (s == "Unseen" || s == "unseen") return SplitMode::Unseen;
  throw ConfigError("unknown split mode: " + s);
}

// One trainable sample: an object queried for one of its affordances.
struct SampleRef {
  std::string id;  // "<object_id>#<affordance>"
  std::string object_id;
  std::string category;
  std::string affordance;

  std::pair<std::string, std::string> pair_key() const {
    return {category, affordance};
  }
};

struct DatasetSplit {
  std::vector<std::string> train, val, test;
  SplitMode mode = SplitMode::Seen;
};

namespace detail {

inline void verify_split(const DatasetSplit& split,
                         const std::vector<SampleRef>& samples) {
  std::map<std::string, std::pair<std::string, std::string>> pair_of;
  for (const auto& s : samples) pair_of[s.id] = s.pair_key();
  std::set<std::pair<std::string, std::string>> train_pairs, test_pairs;
  for (const auto& id : split.train) train_pairs.insert(pair_of.at(id));
  for (const auto& id : split.test) test_pairs.insert(pair_of.at(id));
  if (split.mode == SplitMode::Seen) {
    for (const auto& p : test_pairs)
      if (!train_pairs.count(p))
        throw SplitError("Seen split: test pair (" + p.first + "," + p.second +
                         ") missing from train");
  } else {
    for (const auto& p : test_pairs)
      if (train_pairs.count(p))
        throw SplitError("Unseen split: pair (" + p.first + "," + p.second +
                         ") leaks into train");
  }
}

}  // namespace detail

// Seen: stratified 80/10/10 per (category, affordance) pair.
// Unseen: a seeded subset of whole pairs is held out entirely for val/test.
// The split invariants are re-verified before returning.
inline DatasetSplit build_splits(const std::vector<SampleRef>& samples,
                                 SplitMode mode, std::uint64_t seed) {
  if (samples.empty()) throw ArgumentError("build_splits: empty sample list");
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> groups;
  for (const auto& s : samples) groups[s.pair_key()].push_back(s.id);

  DatasetSplit split;
  split.mode = mode;
  if (mode == SplitMode::Seen) {
    std::uint64_t gi = 0;
    for (auto& [key, ids] : groups) {
      core::Rng rng(core::substream_seed(seed, "split.seen", gi++));
      rng.shuffle(ids);
      const std::int64_t n = (std::int64_t)ids.size();
      const std::int64_t n_val = n / 10;
      const std::int64_t n_test = n / 10;
      const std::int64_t n_train = n - n_val - n_test;
      for (std::int64_t i = 0; i < n; ++i) {
        if (i < n_train)
          split.train.push_back(ids[(std::size_t)i]);
        else if (i < n_train + n_val)
          split.val.push_back(ids[(std::size_t)i]);
        else
          split.test.push_back(ids[(std::size_t)i]);
      }
    }
  } else {
    if (groups.size() < 2)
      throw SplitError(
          "Unseen split infeasible: need >= 2 distinct (category, affordance) "
          "pairs, have " +
          std::to_string(groups.size()));
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& [key, ids] : groups) pairs.push_back(key);
    core::Rng rng(core::substream_seed(seed, "split.unseen"));
    rng.shuffle(pairs);
    const std::int64_t n_held =
        std::max<std::int64_t>(1, (std::int64_t)std::llround(0.2 * (double)pairs.size()));
    std::set<std::pair<std::string, std::string>> held(pairs.begin(),
                                                       pairs.begin() + n_held);
    for (auto& [key, ids] : groups) {
      std::vector<std::string> sorted = ids;
      std::sort(sorted.begin(), sorted.end());
      if (held.count(key)) {
        for (std::size_t i = 0; i < sorted.size(); ++i)
          (i % 2 == 0 ? split.test : split.val).push_back(sorted[i]);
      } else {
        for (auto& id : sorted) split.train.push_back(id);
      }
    }
  }
  detail::verify_split(split, samples);
  return split;
}

// Draws K matching point clouds for one Gaussian: without replacement when
// the pool is large enough, otherwise with replacement.
inline std::vector<std::size_t> pair_pointclouds(const std::string& g_id,
                                                 std::size_t pool_size,
                                                 std::int64_t K,
                                                 std::uint64_t seed) {
  if (pool_size == 0)
    throw PairingError("no point clouds available to pair with " + g_id);
  if (K < 1) throw ArgumentError("pair_pointclouds: K must be >= 1");
  core::Rng rng(core::substream_seed(seed, "pairing." + g_id));
  std::vector<std::size_t> picks;
  if ((std::int64_t)pool_size >= K) {
    std::vector<std::size_t> idx(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) idx[i] = i;
    rng.shuffle(idx);
    picks.assign(idx.begin(), idx.begin() + K);
  } else {
    for (std::int64_t i = 0; i < K; ++i)
      picks.push_back((std::size_t)rng.uniform_int(pool_size));
  }
  return picks;
}

}  // namespace affordsplat::datagen
