#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <ostream>

#include "xpq/emx.hpp"

namespace xpq {

using Key = std::uint64_t;
using Priority = std::uint64_t;
using Word = emx::Word;

/// Sentinel for "no priority". Not a legal priority for stored entries.
inline constexpr Priority kInfinity = std::numeric_limits<Priority>::max();

struct Entry {
  Key key = 0;
  Priority priority = 0;
  friend bool operator==(const Entry&, const Entry&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Entry& e) {
  return os << '(' << e.key << ',' << e.priority << ')';
}

/// Total order on (priority, key): equal priorities are ordered by ascending
/// key. Every comparison the queue makes (lists, boundaries, selection) goes
/// through Rank, so ties resolve identically everywhere.
struct Rank {
  Priority priority = kInfinity;
  Key key = std::numeric_limits<Key>::max();

  static constexpr Rank infinite() { return {}; }
  constexpr bool is_infinite() const { return priority == kInfinity; }
  friend constexpr auto operator<=>(const Rank&, const Rank&) = default;
};

inline constexpr Rank rank_of(const Entry& e) { return {e.priority, e.key}; }
inline constexpr Rank rank_of(Key k, Priority p) { return {p, k}; }

enum class SignalKind : std::uint8_t { Delete = 0, Update = 1 };

struct Signal {
  SignalKind kind = SignalKind::Delete;
  Key key = 0;
  Priority priority = 0;  // meaningful for Update only

  static constexpr Signal del(Key k) { return {SignalKind::Delete, k, 0}; }
  static constexpr Signal update(Key k, Priority p) { return {SignalKind::Update, k, p}; }
  constexpr bool is_delete() const { return kind == SignalKind::Delete; }
  constexpr bool is_update() const { return kind == SignalKind::Update; }
  friend bool operator==(const Signal&, const Signal&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Signal& s) {
  if (s.is_delete()) return os << "Delete(" << s.key << ')';
  return os << "Update(" << s.key << ',' << s.priority << ')';
}

// On-disk encodings, two words per record. A signal's tag lives in the top
// bit of its key word; keys never reach that bit because w > bit_width(N).
inline constexpr Word kTagBit = Word{1} << 63;

inline void encode(const Entry& e, Word* out) {
  out[0] = e.key;
  out[1] = e.priority;
}
inline Entry decode_entry(const Word* in) { return {in[0], in[1]}; }

inline void encode(const Signal& s, Word* out) {
  out[0] = s.key | (s.is_update() ? kTagBit : 0);
  out[1] = s.is_update() ? s.priority : 0;
}
inline Signal decode_signal(const Word* in) {
  if (in[0] & kTagBit) return Signal::update(in[0] & ~kTagBit, in[1]);
  return Signal::del(in[0]);
}

}  // namespace xpq
