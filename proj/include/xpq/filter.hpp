#pragma once

// Deletable approximate-membership filter over integer keys: a bucketed
// fingerprint table (4 slots per bucket, two candidate buckets per key) with a
// 2-bit duplicate counter per slot and a spill list for anything the table
// cannot hold. Answers have false positives only.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace xpq::filter {

using Key = std::uint64_t;
using Word = std::uint64_t;

class OverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct FilterParams {
  std::uint64_t capacity = 1;
  double epsilon = 1.0 / 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (capacity < 1) throw std::invalid_argument("filter: capacity must be >= 1");
    if (!(epsilon > 0.0 && epsilon < 1.0))
      throw std::invalid_argument("filter: epsilon must be in (0,1)");
  }

  /// ceil(log2(1/epsilon)) + 3
  unsigned fingerprint_bits() const {
    const double bits = std::ceil(std::log2(1.0 / epsilon) - 1e-12);
    return static_cast<unsigned>(std::max(1.0, bits)) + 3;
  }
};

class Filter {
 public:
  static constexpr unsigned kSlotsPerBucket = 4;
  static constexpr unsigned kCounterBits = 2;
  static constexpr double kMaxLoad = 0.85;
  static constexpr unsigned kMaxKicks = 256;
  static constexpr std::uint64_t kHeaderWords = 6;
  // Space bound constants: bits <= c1 * n * log2(1/eps) + c2 * (n + w).
  static constexpr double kSpaceC1 = 2.0;
  static constexpr double kSpaceC2 = 8.0;

  Filter() : Filter(FilterParams{}) {}

  explicit Filter(FilterParams params) : params_(params) {
    params_.validate();
    fp_bits_ = params_.fingerprint_bits();
    if (fp_bits_ > 32) throw std::invalid_argument("filter: epsilon too small");
    buckets_ = bucket_count(params_.capacity);
    slots_.assign(buckets_ * kSlotsPerBucket, Slot{});
  }

  static std::uint64_t bucket_count(std::uint64_t capacity) {
    const double slots = static_cast<double>(capacity) / kMaxLoad;
    return std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(std::ceil(slots / kSlotsPerBucket)));
  }

  const FilterParams& params() const { return params_; }
  std::uint64_t count() const { return count_; }
  std::uint64_t hard_limit() const { return 2 * params_.capacity; }
  std::size_t spill_size() const { return spill_.size(); }

  void insert(Key k) {
    if (count_ >= hard_limit()) throw OverflowError("filter: saturated");
    auto [i1, fp] = locate(k);
    const auto i2 = alt(i1, fp);
    ++count_;
    if (bump(i1, fp) || bump(i2, fp)) return;
    if (place(i1, fp) || place(i2, fp)) return;
    kick_in(i1, fp, k);
  }

  /// Removes one multiplicity of k. Deleting an absent key is a caller bug;
  /// it is detected only when no matching fingerprint exists at all.
  void erase(Key k) {
    auto [i1, fp] = locate(k);
    const auto i2 = alt(i1, fp);
    const auto canon = std::min(i1, i2);
    for (auto it = spill_.begin(); it != spill_.end(); ++it) {
      if (it->first == canon && it->second == fp) {
        spill_.erase(it);
        --count_;
        return;
      }
    }
    if (drop(i1, fp) || drop(i2, fp)) {
      --count_;
      return;
    }
#ifndef NDEBUG
    throw std::logic_error("filter: erase of absent key");
#endif
  }

  bool contains(Key k) const {
    auto [i1, fp] = locate(k);
    const auto i2 = alt(i1, fp);
    if (find(i1, fp) || find(i2, fp)) return true;
    const auto canon = std::min(i1, i2);
    return std::any_of(spill_.begin(), spill_.end(),
                       [&](const auto& s) { return s.first == canon && s.second == fp; });
  }

  static Filter rebuild(FilterParams params, std::span<const Key> keys) {
    Filter f(params);
    if (keys.size() > f.hard_limit()) throw OverflowError("filter: rebuild over capacity");
    for (auto k : keys) f.insert(k);
    return f;
  }

  // ---- serialization ----
  // Words: capacity, epsilon (IEEE-754 bits), seed, count, bucket count,
  // spill count; then the slot table packed LSB-first, (fp_bits + 2) bits per
  // slot as [counter:2 | fingerprint:fp_bits]; then one word per spill entry
  // as (bucket << 32 | fingerprint).

  std::uint64_t table_words() const {
    return (slots_.size() * (fp_bits_ + kCounterBits) + 63) / 64;
  }
  std::uint64_t serialized_words() const {
    return kHeaderWords + table_words() + spill_.size();
  }
  std::uint64_t serialized_bits() const { return serialized_words() * 64; }

  /// Upper bound on the serialized size for given params with a spill list of
  /// at most `spill` entries.
  static std::uint64_t max_serialized_words(const FilterParams& p, std::uint64_t spill) {
    const auto slots = bucket_count(p.capacity) * kSlotsPerBucket;
    return kHeaderWords + (slots * (p.fingerprint_bits() + kCounterBits) + 63) / 64 + spill;
  }

  static double space_bound_bits(const FilterParams& p, std::uint64_t word_bits) {
    const double n = static_cast<double>(p.capacity);
    return kSpaceC1 * n * std::log2(1.0 / p.epsilon) +
           kSpaceC2 * (n + static_cast<double>(word_bits));
  }

  std::vector<Word> serialize() const {
    std::vector<Word> out(serialized_words(), 0);
    double eps = params_.epsilon;
    Word eps_bits;
    std::memcpy(&eps_bits, &eps, sizeof eps);
    out[0] = params_.capacity;
    out[1] = eps_bits;
    out[2] = params_.seed;
    out[3] = count_;
    out[4] = buckets_;
    out[5] = spill_.size();
    const unsigned width = fp_bits_ + kCounterBits;
    std::span<Word> table(out.data() + kHeaderWords, table_words());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const Word v = slots_[i].fp == 0
                         ? 0
                         : (static_cast<Word>(slots_[i].fp) << kCounterBits) | slots_[i].extra;
      put_bits(table, i * width, width, v);
    }
    auto* spill_out = out.data() + kHeaderWords + table_words();
    for (std::size_t i = 0; i < spill_.size(); ++i)
      spill_out[i] = (spill_[i].first << 32) | spill_[i].second;
    return out;
  }

  static Filter deserialize(std::span<const Word> in) {
    if (in.size() < kHeaderWords) throw std::invalid_argument("filter: truncated image");
    FilterParams p;
    p.capacity = in[0];
    std::memcpy(&p.epsilon, &in[1], sizeof p.epsilon);
    p.seed = in[2];
    Filter f(p);
    f.count_ = in[3];
    if (in[4] != f.buckets_) throw std::invalid_argument("filter: bucket count mismatch");
    const auto spill = in[5];
    if (in.size() < f.table_words() + kHeaderWords + spill)
      throw std::invalid_argument("filter: truncated image");
    const unsigned width = f.fp_bits_ + kCounterBits;
    std::span<const Word> table(in.data() + kHeaderWords, f.table_words());
    for (std::size_t i = 0; i < f.slots_.size(); ++i) {
      const Word v = get_bits(table, i * width, width);
      f.slots_[i].fp = static_cast<std::uint32_t>(v >> kCounterBits);
      f.slots_[i].extra = static_cast<std::uint8_t>(v & ((1u << kCounterBits) - 1));
    }
    const auto* spill_in = in.data() + kHeaderWords + f.table_words();
    for (std::uint64_t i = 0; i < spill; ++i)
      f.spill_.emplace_back(spill_in[i] >> 32, spill_in[i] & 0xffffffffULL);
    return f;
  }

  friend bool operator==(const Filter& a, const Filter& b) {
    return a.serialize() == b.serialize();
  }

 private:
  struct Slot {
    std::uint32_t fp = 0;     // 0 marks an empty slot
    std::uint8_t extra = 0;   // multiplicity - 1
  };

  std::pair<std::uint64_t, std::uint32_t> locate(Key k) const {
    const auto h = splitmix64(k ^ splitmix64(params_.seed));
    const std::uint64_t mask = (std::uint64_t{1} << fp_bits_) - 1;
    auto fp = static_cast<std::uint32_t>(h & mask);
    if (fp == 0) fp = 1;
    return {(h >> 32) % buckets_, fp};
  }

  std::uint64_t alt(std::uint64_t i, std::uint32_t fp) const {
    const auto h = splitmix64(fp ^ (params_.seed * 0x2545f4914f6cdd1dULL)) % buckets_;
    return (h + buckets_ - i) % buckets_;
  }

  Slot* bucket(std::uint64_t i) { return slots_.data() + i * kSlotsPerBucket; }
  const Slot* bucket(std::uint64_t i) const { return slots_.data() + i * kSlotsPerBucket; }

  bool bump(std::uint64_t i, std::uint32_t fp) {
    auto* b = bucket(i);
    for (unsigned s = 0; s < kSlotsPerBucket; ++s) {
      if (b[s].fp == fp && b[s].extra < (1u << kCounterBits) - 1) {
        ++b[s].extra;
        return true;
      }
    }
    return false;
  }

  bool place(std::uint64_t i, std::uint32_t fp, std::uint8_t extra = 0) {
    auto* b = bucket(i);
    for (unsigned s = 0; s < kSlotsPerBucket; ++s) {
      if (b[s].fp == 0) {
        b[s] = Slot{fp, extra};
        return true;
      }
    }
    return false;
  }

  bool drop(std::uint64_t i, std::uint32_t fp) {
    auto* b = bucket(i);
    for (unsigned s = 0; s < kSlotsPerBucket; ++s) {
      if (b[s].fp == fp) {
        if (b[s].extra > 0)
          --b[s].extra;
        else
          b[s] = Slot{};
        return true;
      }
    }
    return false;
  }

  bool find(std::uint64_t i, std::uint32_t fp) const {
    const auto* b = bucket(i);
    for (unsigned s = 0; s < kSlotsPerBucket; ++s)
      if (b[s].fp == fp) return true;
    return false;
  }

  // Cuckoo displacement; a victim that finds no home lands in the spill list,
  // one entry per multiplicity.
  void kick_in(std::uint64_t i, std::uint32_t fp, Key k) {
    Slot carry{fp, 0};
    std::uint64_t rng = splitmix64(params_.seed ^ (k * 0x9e3779b97f4a7c15ULL) ^ count_);
    for (unsigned n = 0; n < kMaxKicks; ++n) {
      rng = splitmix64(rng);
      auto* b = bucket(i);
      std::swap(carry, b[rng % kSlotsPerBucket]);
      i = alt(i, carry.fp);
      if (place(i, carry.fp, carry.extra)) return;
    }
    const auto canon = std::min(i, alt(i, carry.fp));
    for (unsigned c = 0; c <= carry.extra; ++c) spill_.emplace_back(canon, carry.fp);
  }

  static void put_bits(std::span<Word> out, std::uint64_t pos, unsigned width, Word v) {
    const auto word = pos / 64;
    const auto shift = pos % 64;
    out[word] |= v << shift;
    if (shift + width > 64) out[word + 1] |= v >> (64 - shift);
  }
  static Word get_bits(std::span<const Word> in, std::uint64_t pos, unsigned width) {
    const auto word = pos / 64;
    const auto shift = pos % 64;
    Word v = in[word] >> shift;
    if (shift + width > 64) v |= in[word + 1] << (64 - shift);
    return width == 64 ? v : v & ((Word{1} << width) - 1);
  }

  FilterParams params_;
  unsigned fp_bits_ = 0;
  std::uint64_t buckets_ = 1;
  std::uint64_t count_ = 0;
  std::vector<Slot> slots_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spill_;
};

}  // namespace xpq::filter
