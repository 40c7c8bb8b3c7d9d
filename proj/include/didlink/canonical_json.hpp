#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace didlink {

using Json = nlohmann::json;

/// Lexicographically sorted keys, no insignificant whitespace. nlohmann's
/// object type is an ordered std::map, so dump() already has this shape as
/// long as no floating point values are involved.
inline std::string canonical(const Json &value) { return value.dump(); }

/// Parses text and requires it to be byte-identical to its canonical form.
/// Throws Error(Malformed) otherwise.
Json parse_canonical(std::string_view text);
/// Plain parse; throws Error(Malformed) on syntax errors.
Json parse_json(std::string_view text);

} // namespace didlink
