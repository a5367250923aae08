#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace moe_affect {

/// The fixed six-class emotion label space, in canonical order.
inline constexpr std::size_t kNumClasses = 6;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "neutral", "angry", "happy", "sad", "worried", "surprised"};

enum class Emotion : std::uint8_t {
  neutral = 0,
  angry = 1,
  happy = 2,
  sad = 3,
  worried = 4,
  surprised = 5,
};

inline std::string_view to_string(Emotion e) { return kClassNames[static_cast<std::size_t>(e)]; }

inline std::optional<Emotion> parse_emotion(std::string_view s) {
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (kClassNames[i] == s) return static_cast<Emotion>(i);
  return std::nullopt;
}

inline Emotion parse_emotion_or_throw(std::string_view s) {
  auto e = parse_emotion(s);
  if (!e) throw std::invalid_argument("unknown emotion label: " + std::string(s));
  return *e;
}

inline std::size_t class_index(Emotion e) { return static_cast<std::size_t>(e); }

inline Emotion emotion_from_index(std::size_t i) {
  if (i >= kNumClasses) throw std::out_of_range("emotion index out of range");
  return static_cast<Emotion>(i);
}

}  // namespace moe_affect
