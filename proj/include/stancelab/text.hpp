#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stancelab {

// Splits on Unicode whitespace (ASCII space/tab/newline family plus NBSP,
// the U+2000 block, line/paragraph separators and ideographic space).
std::vector<std::string> split_whitespace(std::string_view text);

std::size_t whitespace_token_count(std::string_view text);

std::string trim(std::string_view text);

// Case mapping for ASCII and the Latin-1 supplement (enough for DE/FR/IT
// party labels such as GRÜNE); other code points pass through unchanged.
std::string utf8_uppercase(std::string_view text);
std::string utf8_lowercase(std::string_view text);

// True for ASCII punctuation and the common Unicode punctuation blocks
// (Latin-1 punctuation, general punctuation, guillemets).
bool is_punctuation(char32_t cp);

// Decodes one UTF-8 code point starting at `pos`; advances `pos` past it.
// Invalid bytes decode as U+FFFD and advance by one.
char32_t decode_utf8(std::string_view text, std::size_t& pos);

void append_utf8(std::string& out, char32_t cp);

// FNV-1a 64-bit, used for content hashing and feature bucketing.
std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

}  // namespace stancelab
