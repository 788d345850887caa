#pragma once

namespace xconst {

// Reserved token ids shared by every suite. Language tags follow at
// [reserved_count, reserved_count + K), then the per-language surface ranges.
enum ReservedToken : int {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kNewline = 3,
  kColon = 4,
  kTranslate = 5,
  kThis = 6,
  kFrom = 7,
  kInto = 8,
};

inline constexpr int kMinReserved = 9;

}  // namespace xconst
