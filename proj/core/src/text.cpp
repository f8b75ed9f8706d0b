#include "dialingle/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "dialingle/error.hpp"

namespace dialingle {
namespace {

// Decodes one code point at byte offset i, advancing i. Malformed input yields
// a negative value.
UChar32 next_codepoint(std::string_view text, int32_t& i) {
  UChar32 c;
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  U8_NEXT(s, i, length, c);
  return c;
}

void append_codepoint(std::string& out, UChar32 c) {
  char buffer[U8_MAX_LENGTH];
  int32_t n = 0;
  UBool error = false;  // U8_APPEND reports overflow here; the buffer always fits one code point
  U8_APPEND(reinterpret_cast<uint8_t*>(buffer), n, U8_MAX_LENGTH, c, error);
  (void)error;
  out.append(buffer, static_cast<size_t>(n));
}

}  // namespace

std::string normalize_text(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) fail(ErrorCode::Internal, "ICU NFC normalizer unavailable");

  const auto source = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString composed = nfc->normalize(source, status);
  if (U_FAILURE(status)) fail(ErrorCode::Internal, "NFC normalization failed");
  std::string utf8;
  composed.toUTF8String(utf8);

  std::string out;
  out.reserve(utf8.size());
  bool pending_space = false;
  int32_t i = 0;
  while (i < static_cast<int32_t>(utf8.size())) {
    const UChar32 c = next_codepoint(utf8, i);
    if (c >= 0 && u_isUWhiteSpace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    append_codepoint(out, c < 0 ? 0xFFFD : c);
  }
  return out;
}

std::string case_fold(std::string_view text) {
  auto value = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  value.foldCase();
  std::string out;
  value.toUTF8String(out);
  return out;
}

std::vector<std::string> split_codepoints(std::string_view text) {
  std::vector<std::string> out;
  int32_t i = 0;
  while (i < static_cast<int32_t>(text.size())) {
    const int32_t start = i;
    next_codepoint(text, i);
    out.emplace_back(text.substr(static_cast<size_t>(start), static_cast<size_t>(i - start)));
  }
  return out;
}

std::vector<std::string> split_words(std::string_view normalized) {
  std::vector<std::string> words;
  size_t pos = 0;
  while (pos < normalized.size()) {
    size_t end = normalized.find(' ', pos);
    if (end == std::string_view::npos) end = normalized.size();
    if (end > pos) words.emplace_back(normalized.substr(pos, end - pos));
    pos = end + 1;
  }
  return words;
}

std::string strip_punctuation(std::string_view word) {
  std::vector<std::pair<UChar32, std::string>> cps;
  int32_t i = 0;
  while (i < static_cast<int32_t>(word.size())) {
    const int32_t start = i;
    const UChar32 c = next_codepoint(word, i);
    cps.emplace_back(c, std::string(word.substr(static_cast<size_t>(start), static_cast<size_t>(i - start))));
  }
  size_t first = 0;
  size_t last = cps.size();
  while (first < last && cps[first].first >= 0 && u_ispunct(cps[first].first)) ++first;
  while (last > first && cps[last - 1].first >= 0 && u_ispunct(cps[last - 1].first)) --last;
  std::string out;
  for (size_t k = first; k < last; ++k) out += cps[k].second;
  return out;
}

bool starts_with(std::string_view text, std::string_view prefix) {
  return text.substr(0, prefix.size()) == prefix;
}

}  // namespace dialingle
