#include "didlink/time.hpp"

#include <cstdio>
#include <ctime>

#include "didlink/error.hpp"

namespace didlink {

std::string format_utc(Timestamp t) {
    std::time_t secs = static_cast<std::time_t>(to_unix(t));
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

Timestamp parse_utc(std::string_view text) {
    if (text.size() != 20 || text[4] != '-' || text[7] != '-' || text[10] != 'T' || text[13] != ':' ||
        text[16] != ':' || text[19] != 'Z')
        throw Error(ErrorCode::Malformed, "timestamp must look like YYYY-MM-DDTHH:MM:SSZ");
    auto field = [&](std::size_t pos, std::size_t len) {
        int v = 0;
        for (std::size_t i = pos; i < pos + len; ++i) {
            if (text[i] < '0' || text[i] > '9') throw Error(ErrorCode::Malformed, "timestamp digit expected");
            v = v * 10 + (text[i] - '0');
        }
        return v;
    };
    std::tm tm{};
    tm.tm_year = field(0, 4) - 1900;
    tm.tm_mon = field(5, 2) - 1;
    tm.tm_mday = field(8, 2);
    tm.tm_hour = field(11, 2);
    tm.tm_min = field(14, 2);
    tm.tm_sec = field(17, 2);
    auto t = from_unix(static_cast<std::int64_t>(timegm(&tm)));
    if (format_utc(t) != text) throw Error(ErrorCode::Malformed, "timestamp out of range");
    return t;
}

} // namespace didlink
