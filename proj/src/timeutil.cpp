#include "varilens/timeutil.hpp"

#include <chrono>
#include <cstdio>

#include "varilens/error.hpp"

namespace varilens::timeutil {

namespace {

bool read_digits(const std::string& s, std::size_t& pos, int count, int& out) {
  int v = 0;
  for (int i = 0; i < count; ++i) {
    if (pos >= s.size() || s[pos] < '0' || s[pos] > '9') return false;
    v = v * 10 + (s[pos] - '0');
    ++pos;
  }
  out = v;
  return true;
}

bool expect(const std::string& s, std::size_t& pos, char c) {
  if (pos >= s.size() || s[pos] != c) return false;
  ++pos;
  return true;
}

}  // namespace

std::int64_t parse_iso8601_ms(const std::string& text) {
  std::size_t pos = 0;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  bool ok = read_digits(text, pos, 4, y) && expect(text, pos, '-') &&
            read_digits(text, pos, 2, mo) && expect(text, pos, '-') &&
            read_digits(text, pos, 2, d);
  if (ok) {
    if (pos >= text.size() || (text[pos] != 'T' && text[pos] != ' ')) ok = false;
    else ++pos;
  }
  ok = ok && read_digits(text, pos, 2, h) && expect(text, pos, ':') &&
       read_digits(text, pos, 2, mi) && expect(text, pos, ':') &&
       read_digits(text, pos, 2, se);
  if (!ok) throw parse_error("invalid timestamp '" + text + "'");

  int millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    int frac = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 3) frac = frac * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0 || digits > 9)
      throw parse_error("invalid fractional seconds in '" + text + "'");
    while (digits < 3) {
      frac *= 10;
      ++digits;
    }
    millis = frac;
  }
  if (pos < text.size()) {
    if (text[pos] == 'Z') ++pos;
    if (pos != text.size()) throw parse_error("trailing characters in timestamp '" + text + "'");
  }

  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                     day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || se > 59)
    throw parse_error("out-of-range timestamp '" + text + "'");

  sys_days days_part{ymd};
  std::int64_t ms = duration_cast<milliseconds>(days_part.time_since_epoch()).count();
  ms += ((static_cast<std::int64_t>(h) * 60 + mi) * 60 + se) * 1000 + millis;
  return ms;
}

std::string format_iso8601_ms(std::int64_t ms) {
  using namespace std::chrono;
  sys_time<milliseconds> tp{milliseconds{ms}};
  sys_days dp = floor<days>(tp);
  year_month_day ymd{dp};
  auto tod = duration_cast<milliseconds>(tp - dp);
  int h = static_cast<int>(tod.count() / 3600000);
  int mi = static_cast<int>((tod.count() / 60000) % 60);
  int se = static_cast<int>((tod.count() / 1000) % 60);
  int millis = static_cast<int>(tod.count() % 1000);

  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), h, mi, se, millis);
  return buf;
}

}  // namespace varilens::timeutil
