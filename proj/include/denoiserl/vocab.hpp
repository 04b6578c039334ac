#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace denoiserl {

using Token = int32_t;

// Token vocabulary of the chain-arithmetic task. Ids are fixed constants so
// serialized datasets, pools, and checkpoints stay stable across runs.
struct Vocabulary {
  // ids 0..9 are the digits themselves
  static constexpr Token kPlus = 10;
  static constexpr Token kMinus = 11;
  static constexpr Token kMul = 12;
  static constexpr Token kEquals = 13;   // step-result marker
  static constexpr Token kSep = 14;      // step separator ';'
  static constexpr Token kAnswer = 15;   // answer marker 'A'
  static constexpr Token kEnd = 16;      // end-of-sequence '#'
  static constexpr Token kAsk = 17;      // prompt terminator '?'
  static constexpr int kSize = 18;       // V

  // Context filler for short histories; outside the generative vocabulary and
  // never sampleable.
  static constexpr Token kPad = kSize;

  static constexpr bool is_digit(Token t) { return t >= 0 && t <= 9; }
  static constexpr bool is_operator(Token t) { return t == kPlus || t == kMinus || t == kMul; }
  static constexpr Token digit(int value) { return static_cast<Token>(value); }

  static const char* name(Token t) {
    static const char* kNames[] = {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
                                   "+", "-", "*", "=", ";", "A", "#", "?"};
    if (t >= 0 && t < kSize) return kNames[t];
    if (t == kPad) return "_";
    return "<bad>";
  }

  static std::string render(std::span<const Token> tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (i) out += ' ';
      out += name(tokens[i]);
    }
    return out;
  }
};

}  // namespace denoiserl
