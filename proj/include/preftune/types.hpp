#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace preftune {

enum class Label { A, B, Tie };

// One-hot over (A, B, Tie).
using LabelVec = std::array<double, 3>;

// (P_a, P_b, P_tie), expected to lie on the probability simplex.
using ProbTriple = std::array<double, 3>;

// A raw Chatbot-Arena-format row before cleaning. Text fields are null when
// the source cell was missing or empty.
struct RawRecord {
  std::string id;
  std::string model_a;
  std::string model_b;
  std::optional<std::string> prompt;
  std::optional<std::string> response_a;
  std::optional<std::string> response_b;
  int winner_model_a = 0;
  int winner_model_b = 0;
  int winner_tie = 0;
};

// One cleaned comparison.
struct PreferenceRecord {
  std::string id;
  std::string prompt;
  std::string response_a;
  std::string response_b;
  Label label = Label::Tie;
};

inline const char* label_name(Label l) {
  switch (l) {
    case Label::A: return "A";
    case Label::B: return "B";
    default: return "Tie";
  }
}

inline std::optional<Label> label_from_name(const std::string& s) {
  if (s == "A") return Label::A;
  if (s == "B") return Label::B;
  if (s == "Tie") return Label::Tie;
  return std::nullopt;
}

}  // namespace preftune
