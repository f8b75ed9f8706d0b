#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dialingle {

/// Unicode NFC, trimmed, internal whitespace runs collapsed to one ASCII space.
/// Invalid UTF-8 sequences are replaced with U+FFFD.
std::string normalize_text(std::string_view text);

/// Full Unicode case folding of UTF-8 text.
std::string case_fold(std::string_view text);

/// Splits UTF-8 text into code points, each returned as its UTF-8 bytes.
std::vector<std::string> split_codepoints(std::string_view text);

/// Whitespace-delimited tokens of already normalized text.
std::vector<std::string> split_words(std::string_view normalized);

/// Drops leading and trailing Unicode punctuation from a word.
std::string strip_punctuation(std::string_view word);

bool starts_with(std::string_view text, std::string_view prefix);

}  // namespace dialingle
