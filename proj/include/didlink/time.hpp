#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace didlink {

using SystemClock = std::chrono::system_clock;
using Timestamp = SystemClock::time_point;
/// Injectable wall clock, so freshness and validity logic is testable.
using ClockFn = std::function<Timestamp()>;

inline Timestamp now() { return SystemClock::now(); }

/// RFC 3339 UTC at second precision, e.g. "2024-05-01T12:00:00Z".
std::string format_utc(Timestamp t);
/// Throws Error(Malformed) unless text has exactly the format_utc shape.
Timestamp parse_utc(std::string_view text);

inline std::int64_t to_unix(Timestamp t) {
    return std::chrono::duration_cast<std::chrono::seconds>(t.time_since_epoch()).count();
}
inline Timestamp from_unix(std::int64_t seconds) { return Timestamp(std::chrono::seconds(seconds)); }

/// Milliseconds as a double, for reporting.
template <typename Duration> double to_ms(Duration d) {
    return std::chrono::duration<double, std::milli>(d).count();
}

} // namespace didlink
