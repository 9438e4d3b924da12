#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace skillmix::text {

/// Matching key for skill and topic names: NFC, case-folded, whitespace
/// runs collapsed to one ASCII space, trimmed.
std::string normalize_key(std::string_view s);

std::string collapse_whitespace(std::string_view s);
std::string trim(std::string_view s);
std::string ascii_lower(std::string_view s);

std::vector<std::string> split_whitespace(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);

/// Number of Unicode code points in a UTF-8 string.
std::size_t codepoint_count(std::string_view utf8);

/// True when the code point starting or ending at a byte boundary is a letter
/// or digit. Used for word-boundary checks on UTF-8 text.
bool alnum_before(std::string_view utf8, std::size_t byte_offset);
bool alnum_at(std::string_view utf8, std::size_t byte_offset);

std::string sha256_hex(std::string_view data);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace skillmix::text
