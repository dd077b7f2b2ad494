#pragma once

#include <json.hpp>

#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace geoprox::detail {

/// Typed reads from one JSON object that collect every schema violation
/// (wrong type, out-of-range integer, unknown key) into `bad` as dotted keys.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& obj, std::string prefix, std::vector<std::string>& bad)
      : obj_(obj), prefix_(std::move(prefix)), bad_(bad) {}

  /// Leaves `out` untouched when the key is absent.
  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    if (!convert(obj_.at(key), out)) bad_.push_back(prefix_ + key);
  }

  void mark(const char* key) { seen_.insert(key); }
  bool has(const char* key) const { return obj_.contains(key); }
  const nlohmann::json& at(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }
  void flag(const std::string& key) { bad_.push_back(prefix_ + key); }
  const std::string& prefix() const { return prefix_; }

  void reject_unknown() {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) bad_.push_back(prefix_ + it.key());
    }
  }

 private:
  template <class T>
  static bool convert(const nlohmann::json& v, T& out) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return false;
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return false;
      if (v.is_number_unsigned()) {
        const auto x = v.get<unsigned long long>();
        if (x > static_cast<unsigned long long>(std::numeric_limits<T>::max())) return false;
        out = static_cast<T>(x);
      } else {
        const auto x = v.get<long long>();
        if constexpr (std::is_unsigned_v<T>) {
          if (x < 0) return false;
        } else {
          if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) return false;
        }
        out = static_cast<T>(x);
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return false;
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return false;
      out = v.get<std::string>();
    } else {
      // std::vector of a scalar type
      if (!v.is_array()) return false;
      T tmp;
      for (const auto& e : v) {
        typename T::value_type x{};
        if (!convert(e, x)) return false;
        tmp.push_back(x);
      }
      out = std::move(tmp);
    }
    return true;
  }

  const nlohmann::json& obj_;
  std::string prefix_;
  std::vector<std::string>& bad_;
  std::set<std::string> seen_;
};

}  // namespace geoprox::detail
