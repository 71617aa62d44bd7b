#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace toothloop {

/// The closed five-class tooth scheme. Upper and lower jaw are not
/// distinguished.
enum class ToothClass { incisor = 0, canine, molar1, molar2, molar3 };

inline constexpr std::size_t kClassCount = 5;

inline constexpr std::array<ToothClass, kClassCount> kAllClasses{
    ToothClass::incisor, ToothClass::canine, ToothClass::molar1,
    ToothClass::molar2, ToothClass::molar3};

std::string_view to_string(ToothClass c);

/// Canonical names only ("incisor", "canine", "molar1", ...).
std::optional<ToothClass> parse_class(std::string_view name);

/// Canonical names plus the synonym table used at ingest time
/// ("cuspid" -> canine, "1st molar" -> molar1, ...). Case-insensitive.
std::optional<ToothClass> map_class_name(std::string_view name);

inline std::size_t index_of(ToothClass c) { return static_cast<std::size_t>(c); }

/// Comma-separated canonical class list, for error messages.
std::string class_list();

}  // namespace toothloop
