#pragma once

#include <cstdint>
#include <string>

namespace varilens::timeutil {

// Parses an ISO-8601 instant ("2025-01-01T00:00:00.100Z") into milliseconds
// since the Unix epoch. Accepts a space instead of 'T', 1..9 fractional
// digits (truncated to milliseconds), and a missing 'Z' (treated as UTC).
std::int64_t parse_iso8601_ms(const std::string& text);

// Canonical form: "YYYY-MM-DDTHH:MM:SS.mmmZ", always UTC, always 3 fractional
// digits. format(parse(x)) is the identity on canonical input.
std::string format_iso8601_ms(std::int64_t ms);

}  // namespace varilens::timeutil
