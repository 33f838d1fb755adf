#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mcl/rng.hpp"
#include "mcl/tasks/pool.hpp"

namespace mcl::tasks {

/// One N-way K-shot task. Items are pool indices; labels are the episode's
/// relabelled classes 0..ways-1, with `classes[c]` the original label.
struct Episode {
  std::size_t ways = 0, shot = 0, queries = 0;
  std::vector<std::size_t> support, query;
  std::vector<std::size_t> support_labels, query_labels;
  std::vector<std::uint16_t> classes;
};

namespace detail {

// First k entries of a uniform random permutation of `items`.
inline std::vector<std::size_t> choose(std::vector<std::size_t> items, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(items[i], items[i + uniform_index(rng, items.size() - i)]);
  items.resize(k);
  return items;
}

}  // namespace detail

/// Classes uniformly without replacement among those with at least
/// shot + query items, then items uniformly without replacement per class.
inline Episode sample_episode(const LabeledPool& pool, std::size_t ways, std::size_t shot, std::size_t query,
                              Rng& rng) {
  if (ways == 0 || shot == 0) throw ContractError("episode needs ways >= 1 and shot >= 1");
  std::vector<std::size_t> eligible;
  std::vector<std::uint16_t> class_ids;
  for (const auto& [label, items] : pool.by_class())
    if (items.size() >= shot + query) {
      eligible.push_back(class_ids.size());
      class_ids.push_back(label);
    }
  if (eligible.size() < ways)
    throw CapacityError("episode needs " + std::to_string(ways) + " classes with >= " + std::to_string(shot + query) +
                        " items, pool has " + std::to_string(eligible.size()));
  Episode ep;
  ep.ways = ways;
  ep.shot = shot;
  ep.queries = query;
  for (std::size_t c : detail::choose(eligible, ways, rng)) ep.classes.push_back(class_ids[c]);
  for (std::size_t c = 0; c < ways; ++c) {
    const auto& items = pool.by_class().at(ep.classes[c]);
    std::vector<std::size_t> pos(items.size());
    std::iota(pos.begin(), pos.end(), 0);
    auto picked = detail::choose(std::move(pos), shot + query, rng);
    for (std::size_t i = 0; i < shot; ++i) {
      ep.support.push_back(items[picked[i]]);
      ep.support_labels.push_back(c);
    }
    for (std::size_t i = shot; i < shot + query; ++i) {
      ep.query.push_back(items[picked[i]]);
      ep.query_labels.push_back(c);
    }
  }
  return ep;
}

}  // namespace mcl::tasks
