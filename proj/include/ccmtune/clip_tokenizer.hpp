// Copyright 2026 The ccmtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Byte-level BPE tokenizer compatible with the CLIP text encoders.
//
// Text is whitespace-collapsed and lowercased, split into words with the CLIP
// pre-tokenisation rule (contractions, letter runs, single digits, runs of
// other symbols), mapped byte-wise to printable code points and merged by
// rank. Ids are framed by start/end tokens; prompts longer than the context
// are rejected rather than truncated.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <zlib.h>

#include "ccmtune/error.hpp"

namespace ccmtune {

namespace detail {

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

/// Decodes UTF-8; invalid bytes come back as U+FFFD.
inline std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) {
      out += U'�';
      ++i;
      continue;
    }
    char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
    bool ok = true;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    out += ok ? cp : U'�';
    i += ok ? len : 1;
  }
  return out;
}

inline std::string encode_utf8(std::u32string_view s) {
  std::string out;
  for (char32_t cp : s) append_utf8(out, cp);
  return out;
}

inline bool is_space(char32_t c) {
  return c == U' ' || (c >= U'\t' && c <= U'\r') || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
         c == 0x3000;
}

inline bool is_number(char32_t c) {
  return (c >= U'0' && c <= U'9') || c == 0xB2 || c == 0xB3 || c == 0xB9 || (c >= 0xBC && c <= 0xBE) ||
         (c >= 0x0660 && c <= 0x0669) || (c >= 0xFF10 && c <= 0xFF19);
}

/// Letter test: exact for ASCII and Latin-1; above that, everything outside
/// the common punctuation, symbol and number blocks counts as a letter.
inline bool is_letter(char32_t c) {
  if (c < 0x80) return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z');
  if (c < 0x100) return c == 0xAA || c == 0xB5 || c == 0xBA || (c >= 0xC0 && c != 0xD7 && c != 0xF7);
  if (is_space(c) || is_number(c)) return false;
  if (c >= 0x2000 && c <= 0x2BFF) return false;  // punctuation, symbols, arrows, math, shapes
  if (c >= 0x3000 && c <= 0x303F) return false;  // CJK punctuation
  if (c >= 0xFE30 && c <= 0xFE4F) return false;
  if (c >= 0xFF00 && c <= 0xFF0F) return false;
  if (c >= 0x1F000 && c <= 0x1FAFF) return false;  // emoji
  return c != 0xFFFD;
}

inline char32_t to_lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;  // Greek
  if (c >= 0x410 && c <= 0x42F) return c + 32;                // Cyrillic
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

/// Printable code point for each byte, so byte strings become BPE symbols.
inline const std::array<char32_t, 256>& byte_to_unicode() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t n = 0;
    for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<char32_t>(b) : 256 + n++;
    return t;
  }();
  return table;
}

/// The byte-to-unicode symbols in vocabulary order: direct bytes first,
/// remapped bytes after.
inline std::vector<std::string> base_symbols() {
  const auto& t = byte_to_unicode();
  std::vector<std::string> out;
  for (int pass = 0; pass < 2; ++pass) {
    for (int b = 0; b < 256; ++b) {
      const bool direct = t[b] == static_cast<char32_t>(b);
      if (direct == (pass == 0)) {
        std::string s;
        append_utf8(s, t[b]);
        out.push_back(s);
      }
    }
  }
  return out;
}

inline std::string read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");  // reads plain files too
  if (!f) throw Error("cannot open BPE vocabulary " + path.string());
  std::string out;
  std::array<char, 1 << 16> buf{};
  int n = 0;
  while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) out.append(buf.data(), n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw Error("cannot read BPE vocabulary " + path.string());
  return out;
}

}  // namespace detail

class ClipTokenizer {
 public:
  static constexpr std::size_t kContextLength = 77;
  static constexpr std::size_t kMaxMerges = 49152 - 256 - 2;

  /// `merges_text` is the merges file content: a header line, then one
  /// "left right" pair per line in rank order.
  static ClipTokenizer from_merges(const std::string& merges_text, std::size_t context_length = kContextLength) {
    ClipTokenizer t;
    t.context_length_ = context_length;
    std::istringstream in(merges_text);
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::pair<std::string, std::string>> merges;
    while (merges.size() < kMaxMerges && std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto sp = line.find(' ');
      if (sp == std::string::npos) continue;
      merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    std::vector<std::string> vocab = detail::base_symbols();
    const std::size_t base = vocab.size();
    for (std::size_t i = 0; i < base; ++i) vocab.push_back(vocab[i] + "</w>");
    for (std::size_t r = 0; r < merges.size(); ++r) {
      vocab.push_back(merges[r].first + merges[r].second);
      t.ranks_.emplace(merges[r].first + ' ' + merges[r].second, r);
    }
    vocab.push_back("<start_of_text>");
    vocab.push_back("<end_of_text>");
    for (std::size_t i = 0; i < vocab.size(); ++i) t.encoder_.emplace(vocab[i], static_cast<std::int32_t>(i));
    t.sot_ = static_cast<std::int32_t>(vocab.size() - 2);
    t.eot_ = static_cast<std::int32_t>(vocab.size() - 1);
    return t;
  }

  static ClipTokenizer from_file(const std::filesystem::path& path, std::size_t context_length = kContextLength) {
    return from_merges(detail::read_maybe_gzip(path), context_length);
  }

  ClipTokenizer(ClipTokenizer&& other) noexcept
      : encoder_(std::move(other.encoder_)), ranks_(std::move(other.ranks_)), cache_(std::move(other.cache_)),
        sot_(other.sot_), eot_(other.eot_), context_length_(other.context_length_) {}

  std::int32_t start_token() const noexcept { return sot_; }
  std::int32_t end_token() const noexcept { return eot_; }
  std::size_t vocab_size() const noexcept { return encoder_.size(); }
  std::size_t context_length() const noexcept { return context_length_; }

  /// Token ids without the start/end frame.
  std::vector<std::int32_t> encode(const std::string& text) const {
    std::vector<std::int32_t> ids;
    for (const auto& word : split_words(clean(text))) {
      if (word == "<start_of_text>" || word == "<end_of_text>") {
        ids.push_back(encoder_.at(word));
        continue;
      }
      std::string mapped;
      for (unsigned char byte : word) detail::append_utf8(mapped, detail::byte_to_unicode()[byte]);
      for (const auto& piece : bpe(mapped)) {
        const auto it = encoder_.find(piece);
        if (it == encoder_.end()) throw TokenizeError("symbol '" + piece + "' is not in the vocabulary");
        ids.push_back(it->second);
      }
    }
    return ids;
  }

  /// Framed, zero-padded ids of length context_length(). Throws
  /// TokenizeError when the prompt does not fit.
  std::vector<std::int32_t> tokenize(const std::string& text) const {
    if (text.empty()) throw TokenizeError("empty prompt");
    auto body = encode(text);
    if (body.size() + 2 > context_length_) {
      throw TokenizeError("prompt needs " + std::to_string(body.size() + 2) + " tokens, limit is " +
                          std::to_string(context_length_));
    }
    std::vector<std::int32_t> out(context_length_, 0);
    out[0] = sot_;
    std::copy(body.begin(), body.end(), out.begin() + 1);
    out[body.size() + 1] = eot_;
    return out;
  }

  /// Whitespace collapse, trim, lowercase.
  static std::u32string clean(const std::string& text) {
    const auto cps = detail::decode_utf8(text);
    std::u32string out;
    bool pending_space = false;
    for (char32_t c : cps) {
      if (detail::is_space(c)) {
        pending_space = !out.empty();
        continue;
      }
      if (pending_space) out += U' ';
      pending_space = false;
      out += detail::to_lower(c);
    }
    return out;
  }

  /// Pre-tokenisation: at each position the first alternative that matches
  /// wins: special tokens, contractions, a letter run, one digit, a run of
  /// anything that is neither space, letter nor digit.
  static std::vector<std::string> split_words(const std::u32string& s) {
    static const std::array<std::u32string_view, 9> fixed = {
        U"<start_of_text>", U"<end_of_text>", U"'s", U"'t", U"'re", U"'ve", U"'m", U"'ll", U"'d"};
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
      const char32_t c = s[i];
      if (detail::is_space(c)) {
        ++i;
        continue;
      }
      std::size_t len = 0;
      for (auto f : fixed) {
        if (s.compare(i, f.size(), f) == 0) {
          len = f.size();
          break;
        }
      }
      if (len == 0) {
        if (detail::is_letter(c)) {
          while (i + len < s.size() && detail::is_letter(s[i + len])) ++len;
        } else if (detail::is_number(c)) {
          len = 1;
        } else {
          while (i + len < s.size() && !detail::is_space(s[i + len]) && !detail::is_letter(s[i + len]) &&
                 !detail::is_number(s[i + len])) {
            ++len;
          }
        }
      }
      out.push_back(detail::encode_utf8(s.substr(i, len)));
      i += len;
    }
    return out;
  }

 private:
  ClipTokenizer() = default;

  // Merges the lowest-ranked adjacent pair until none is in the table.
  std::vector<std::string> bpe(const std::string& mapped) const {
    {
      std::lock_guard lock(cache_mu_);
      if (auto it = cache_.find(mapped); it != cache_.end()) return it->second;
    }
    std::vector<std::string> word;
    for (char32_t cp : detail::decode_utf8(mapped)) {
      std::string sym;
      detail::append_utf8(sym, cp);
      word.push_back(sym);
    }
    word.back() += "</w>";
    while (word.size() > 1) {
      std::size_t best_rank = SIZE_MAX;
      std::string first, second;
      for (std::size_t k = 0; k + 1 < word.size(); ++k) {
        const auto it = ranks_.find(word[k] + ' ' + word[k + 1]);
        if (it != ranks_.end() && it->second < best_rank) {
          best_rank = it->second;
          first = word[k];
          second = word[k + 1];
        }
      }
      if (best_rank == SIZE_MAX) break;
      std::vector<std::string> merged;
      for (std::size_t k = 0; k < word.size();) {
        if (k + 1 < word.size() && word[k] == first && word[k + 1] == second) {
          merged.push_back(first + second);
          k += 2;
        } else {
          merged.push_back(word[k]);
          ++k;
        }
      }
      word = std::move(merged);
    }
    std::lock_guard lock(cache_mu_);
    cache_.emplace(mapped, word);
    return word;
  }

  std::unordered_map<std::string, std::int32_t> encoder_;
  std::unordered_map<std::string, std::size_t> ranks_;
  mutable std::mutex cache_mu_;
  mutable std::unordered_map<std::string, std::vector<std::string>> cache_;
  std::int32_t sot_ = 0;
  std::int32_t eot_ = 0;
  std::size_t context_length_ = kContextLength;
};

}  // namespace ccmtune
