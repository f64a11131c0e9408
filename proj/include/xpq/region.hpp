#pragma once

// Block-granular transfers over a node region (an ordered list of block ids)
// holding 2-word records.

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "xpq/emx.hpp"
#include "xpq/types.hpp"

namespace xpq {

using Region = std::vector<emx::BlockId>;

inline std::uint64_t blocks_for(std::uint64_t words, std::uint64_t b) { return (words + b - 1) / b; }

inline void read_region(emx::BlockStore& store, const Region& region, std::uint64_t first_block,
                        std::uint64_t nblocks, std::vector<Word>& out) {
  const auto b = store.block_words();
  out.resize(nblocks * b);
  for (std::uint64_t i = 0; i < nblocks; ++i)
    store.read_block(region.at(first_block + i), std::span<Word>(out.data() + i * b, b));
}

/// Writes words from the start of the region, padding the last block with zeros.
inline void write_region(emx::BlockStore& store, const Region& region, std::span<const Word> words) {
  const auto b = store.block_words();
  const auto nblocks = blocks_for(words.size(), b);
  if (nblocks > region.size()) throw std::logic_error("region overflow");
  std::vector<Word> block(b);
  for (std::uint64_t i = 0; i < nblocks; ++i) {
    std::fill(block.begin(), block.end(), Word{0});
    const auto n = std::min<std::uint64_t>(b, words.size() - i * b);
    std::copy_n(words.begin() + static_cast<std::ptrdiff_t>(i * b), n, block.begin());
    store.write_block(region[i], block);
  }
}

template <class Rec>
Rec decode_record(const Word* w) {
  if constexpr (std::is_same_v<Rec, Entry>)
    return decode_entry(w);
  else
    return decode_signal(w);
}

template <class Rec>
std::vector<Rec> read_records(emx::BlockStore& store, const Region& region, std::uint64_t n) {
  std::vector<Word> words;
  read_region(store, region, 0, blocks_for(2 * n, store.block_words()), words);
  std::vector<Rec> out(n);
  for (std::uint64_t i = 0; i < n; ++i) out[i] = decode_record<Rec>(words.data() + 2 * i);
  return out;
}

template <class Rec>
void write_records(emx::BlockStore& store, const Region& region, const std::vector<Rec>& recs) {
  std::vector<Word> words(2 * recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) encode(recs[i], words.data() + 2 * i);
  write_region(store, region, words);
}

/// Streams records onto the end of a region, one block write per B words. A
/// partially filled last block is read once on open and written on close.
class RecordAppender {
 public:
  RecordAppender(emx::BlockStore& store, const Region& region, std::uint64_t word_pos)
      : store_(store), region_(region), pos_(word_pos), buf_(store.block_words(), 0),
        pin_(store.pin(store.block_words())) {
    const auto b = store_.block_words();
    if (pos_ % b != 0) store_.read_block(region_.at(pos_ / b), buf_);
  }
  RecordAppender(const RecordAppender&) = delete;
  RecordAppender& operator=(const RecordAppender&) = delete;
  ~RecordAppender() {
    const auto b = store_.block_words();
    if (pos_ % b != 0) store_.write_block(region_.at(pos_ / b), buf_);
  }

  template <class Rec>
  void put(const Rec& r) {
    Word w[2];
    encode(r, w);
    push(w[0]);
    push(w[1]);
  }

 private:
  void push(Word w) {
    const auto b = store_.block_words();
    buf_[pos_ % b] = w;
    ++pos_;
    if (pos_ % b == 0) {
      store_.write_block(region_.at(pos_ / b - 1), buf_);
      std::fill(buf_.begin(), buf_.end(), Word{0});
    }
  }

  emx::BlockStore& store_;
  const Region& region_;
  std::uint64_t pos_;
  std::vector<Word> buf_;
  emx::PinToken pin_;
};

}  // namespace xpq
