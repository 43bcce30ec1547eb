#pragma once

namespace s2s {

// Reserved vocabulary ids, fixed across every model and data file.
constexpr int kPad = 0;
constexpr int kUnk = 1;
constexpr int kSos = 2;
constexpr int kEos = 3;
constexpr int kNumReserved = 4;

// Canonical surface forms of the reserved ids (vocabulary files, logs).
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kSosToken = "<s>";
inline constexpr const char* kEosToken = "</s>";

}  // namespace s2s
