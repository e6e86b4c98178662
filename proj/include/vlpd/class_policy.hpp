#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace vlpd {

// One row of a class compaction table. Original and compacted names live in
// separate namespaces: "traffic sign" the original label and "traffic sign"
// the compacted class are different entities.
struct PolicyEntry {
  std::string original;
  std::string compacted;
  bool used = true;
};

struct ClassPolicy {
  std::vector<PolicyEntry> entries;

  // The urban-scene table: merges CityScapes labels into 9 context classes
  // and drops {motorcycle, train}.
  static ClassPolicy urban_default();
  static ClassPolicy identity(const std::vector<std::string>& names);
};

struct ClassSet {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const;
};

// Ordered by first appearance of each used compacted name.
ClassSet compact_classes(const ClassPolicy& policy);

inline constexpr const char* kHumanClass = "human";

}  // namespace vlpd
