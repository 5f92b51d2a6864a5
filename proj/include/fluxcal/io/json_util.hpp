#pragma once

#include "fluxcal/errors.hpp"

#include <json.hpp>

#include <initializer_list>
#include <set>
#include <string>

namespace fluxcal {

using Json = nlohmann::json;

inline Json parse_json(const std::string& text, const std::string& what) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ValidationError(what + ": malformed JSON");
    return j;
}

// Enforces that j is an object holding exactly the given keys: unknown
// fields are rejected, missing fields reported by name.
inline void require_fields(const Json& j, std::initializer_list<const char*> fields,
                           const std::string& what) {
    if (!j.is_object()) throw ValidationError(what + ": expected a JSON object");
    std::set<std::string> want(fields.begin(), fields.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!want.count(it.key()))
            throw ValidationError(what + ": unknown field \"" + it.key() + "\"");
    }
    for (const auto& f : want) {
        if (!j.contains(f)) throw ValidationError(what + ": missing field \"" + f + "\"");
    }
}

inline double json_num(const Json& j, const char* key, const std::string& what) {
    const auto& v = j.at(key);
    if (!v.is_number()) throw ValidationError(what + ": field \"" + key + "\" must be a number");
    return v.get<double>();
}

inline int json_int(const Json& j, const char* key, const std::string& what) {
    const auto& v = j.at(key);
    if (!v.is_number_integer())
        throw ValidationError(what + ": field \"" + key + "\" must be an integer");
    return v.get<int>();
}

} // namespace fluxcal
