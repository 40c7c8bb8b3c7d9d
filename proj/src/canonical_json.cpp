#include "didlink/canonical_json.hpp"

#include "didlink/error.hpp"

namespace didlink {

Json parse_json(std::string_view text) {
    auto value = Json::parse(text.begin(), text.end(), nullptr, false);
    if (value.is_discarded()) throw Error(ErrorCode::Malformed, "invalid JSON");
    return value;
}

Json parse_canonical(std::string_view text) {
    auto value = parse_json(text);
    try {
        if (canonical(value) != text) throw Error(ErrorCode::Malformed, "JSON is not in canonical form");
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::Malformed, e.what());
    }
    return value;
}

} // namespace didlink
