#include "vlpd/class_policy.hpp"

#include <algorithm>
#include <map>

#include "vlpd/error.hpp"

namespace vlpd {

ClassPolicy ClassPolicy::urban_default() {
  ClassPolicy p;
  auto add = [&](std::initializer_list<const char*> originals, const char* compacted, bool used) {
    for (const char* o : originals) p.entries.push_back({o, compacted, used});
  };
  add({"road", "sidewalk"}, "ground", true);
  add({"building", "wall", "fence"}, "building", true);
  add({"vegetation", "terrain"}, "tree", true);
  add({"person", "rider"}, "human", true);
  add({"pole", "traffic light", "traffic sign"}, "traffic sign", true);
  // The vehicle group is not compacted: frequent members stay as their own
  // classes, the tail is dropped.
  add({"car"}, "car", true);
  add({"bicycle"}, "bicycle", true);
  add({"bus"}, "bus", true);
  add({"truck"}, "truck", true);
  add({"motorcycle", "train"}, "vehicle", false);
  return p;
}

ClassPolicy ClassPolicy::identity(const std::vector<std::string>& names) {
  ClassPolicy p;
  for (const auto& n : names) p.entries.push_back({n, n, true});
  return p;
}

std::optional<std::size_t> ClassSet::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

ClassSet compact_classes(const ClassPolicy& policy) {
  std::map<std::string, const PolicyEntry*> seen;
  ClassSet out;
  for (const auto& e : policy.entries) {
    if (e.original.empty() || e.compacted.empty()) {
      throw PolicyError("policy entries need non-empty original and compacted names");
    }
    auto [it, inserted] = seen.emplace(e.original, &e);
    if (!inserted) {
      const PolicyEntry& prev = *it->second;
      if (prev.compacted != e.compacted || prev.used != e.used) {
        throw PolicyError("original class '" + e.original + "' mapped inconsistently ('" +
                          prev.compacted + "' vs '" + e.compacted + "')");
      }
      continue;
    }
    if (e.used && !out.index_of(e.compacted)) out.names.push_back(e.compacted);
  }
  if (out.names.empty()) throw PolicyError("class policy discards every class; empty class set");
  return out;
}

}  // namespace vlpd
