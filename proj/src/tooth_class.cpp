#include "toothloop/tooth_class.hpp"

#include <algorithm>
#include <cctype>
#include <utility>

namespace toothloop {

std::string_view to_string(ToothClass c) {
  switch (c) {
    case ToothClass::incisor: return "incisor";
    case ToothClass::canine: return "canine";
    case ToothClass::molar1: return "molar1";
    case ToothClass::molar2: return "molar2";
    case ToothClass::molar3: return "molar3";
  }
  return "unknown";
}

std::optional<ToothClass> parse_class(std::string_view name) {
  for (ToothClass c : kAllClasses) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

std::optional<ToothClass> map_class_name(std::string_view name) {
  std::string key;
  for (char ch : name) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) key.push_back(static_cast<char>(std::tolower(u)));
  }
  if (!key.empty() && key.back() == 's' && key != "cuspids") key.pop_back();

  static const std::pair<std::string_view, ToothClass> kSynonyms[] = {
      {"incisor", ToothClass::incisor},
      {"centralincisor", ToothClass::incisor},
      {"lateralincisor", ToothClass::incisor},
      {"canine", ToothClass::canine},
      {"cuspid", ToothClass::canine},
      {"cuspids", ToothClass::canine},
      {"molar1", ToothClass::molar1},
      {"1stmolar", ToothClass::molar1},
      {"firstmolar", ToothClass::molar1},
      {"molar2", ToothClass::molar2},
      {"2ndmolar", ToothClass::molar2},
      {"secondmolar", ToothClass::molar2},
      {"molar3", ToothClass::molar3},
      {"3rdmolar", ToothClass::molar3},
      {"thirdmolar", ToothClass::molar3},
  };
  for (const auto& [synonym, cls] : kSynonyms) {
    if (key == synonym) return cls;
  }
  return std::nullopt;
}

std::string class_list() {
  std::string out;
  for (ToothClass c : kAllClasses) {
    if (!out.empty()) out += ", ";
    out += to_string(c);
  }
  return out;
}

}  // namespace toothloop
