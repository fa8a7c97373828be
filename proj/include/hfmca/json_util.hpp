#pragma once

#include <set>
#include <string>
#include <type_traits>

#include "json.hpp"

#include "hfmca/errors.hpp"

namespace hfmca::jsonu {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    // nlohmann converts negative numbers to huge unsigned values silently.
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
        if (v.is_number_integer() && v.get<long long>() < 0)
            throw ConfigError(std::string("key '") + key + "' must be non-negative");
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("key '") + key + "': " + e.what());
    }
}

}  // namespace hfmca::jsonu
