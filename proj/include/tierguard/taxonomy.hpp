// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tierguard {

class ValidatedPolicy;

enum class CategoryOrigin { kSystem, kDynamic };

struct CategoryInfo {
  std::string id;
  std::string name;
  std::string dimension;  // empty for dynamic categories and for "sec"
  std::string description;
  CategoryOrigin origin = CategoryOrigin::kSystem;

  bool operator==(const CategoryInfo&) const = default;
};

inline constexpr std::string_view kSafeId = "sec";

/// True for 1-4 ASCII lowercase letters.
bool is_valid_category_id(std::string_view id);

/// Ordered, immutable set of categories. Order is the rendering order of the
/// category list and the tie-break order for argmax.
class CategoryRegistry {
 public:
  /// Throws Error{kInvalidRegistry} on a malformed entry, a duplicate ID, or a
  /// missing system-origin safe category; Error{kDuplicateId} is used for
  /// duplicates so callers can tell them apart.
  explicit CategoryRegistry(std::vector<CategoryInfo> entries);

  std::span<const CategoryInfo> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::string_view safe_id() const { return kSafeId; }

  const CategoryInfo* find(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }
  /// Position in registry order, or nullopt.
  std::optional<std::size_t> index_of(std::string_view id) const;
  std::vector<std::string> ids() const;

  bool operator==(const CategoryRegistry&) const = default;

 private:
  std::vector<CategoryInfo> entries_;
};

/// The built-in taxonomy: "sec" followed by the 28 risk categories.
const CategoryRegistry& builtin_registry();

/// Exact, case-sensitive lookup. Throws Error{kNotFound}.
const CategoryInfo& lookup(const CategoryRegistry& registry, std::string_view id);

/// Adds one dynamic entry per add_new rule. Scope rules add nothing.
/// Throws Error{kDuplicateId} when a new ID is already present.
CategoryRegistry merge_dynamic(const CategoryRegistry& base, const ValidatedPolicy& policy);

/// Reads a registry override: a JSON array of {id, name, dimension,
/// description}. Every entry is system-origin.
CategoryRegistry load_registry_file(const std::filesystem::path& path);

}  // namespace tierguard
