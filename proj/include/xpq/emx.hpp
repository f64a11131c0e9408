#pragma once

// Simulated external-memory machine: a disk of B-word blocks, an M-word
// memory budget enforced through pins, and exact I/O counters.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace xpq::emx {

using Word = std::uint64_t;

struct ModelParams {
  std::uint64_t n = 1;   // max live keys
  std::uint64_t b = 2;   // block capacity in words
  std::uint64_t m = 2;   // memory capacity in words
  std::uint64_t w = 64;  // word size in bits

  /// Smallest word size that holds a key in {1..n} plus one tag bit.
  static std::uint64_t min_word_bits(std::uint64_t n) {
    return static_cast<std::uint64_t>(std::bit_width(n)) + 1;
  }

  void validate() const {
    if (b < 2) throw std::invalid_argument("model: B must be >= 2");
    if (m < b) throw std::invalid_argument("model: M must be >= B");
    if (n < m) throw std::invalid_argument("model: N must be >= M");
    if (w > 64) throw std::invalid_argument("model: w must be <= 64");
    if (w < min_word_bits(n))
      throw std::invalid_argument("model: w too small for keys in {1..N}");
  }
};

struct BlockId {
  std::uint64_t index = 0;
  friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

struct IoStats {
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  std::uint64_t allocs = 0;

  std::uint64_t transfers() const { return reads + writes; }

  friend IoStats operator-(const IoStats& a, const IoStats& b) {
    return {a.reads - b.reads, a.writes - b.writes, a.allocs - b.allocs};
  }
  friend IoStats operator+(const IoStats& a, const IoStats& b) {
    return {a.reads + b.reads, a.writes + b.writes, a.allocs + b.allocs};
  }
  IoStats& operator+=(const IoStats& o) { return *this = *this + o; }
  friend bool operator==(const IoStats&, const IoStats&) = default;
};

/// Raised when the pinned working set would exceed M words. Signals a bug in
/// the algorithm under test, not a recoverable condition.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Access to an unallocated or freed block, or a malformed transfer.
class FaultError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoreOptions {
  std::uint64_t max_blocks = std::numeric_limits<std::uint64_t>::max();
  bool reuse_freed = true;
  bool enforce_budget = true;
};

class BlockStore;

/// RAII claim on memory words. Move-only; releases its words on destruction.
class PinToken {
 public:
  PinToken() = default;
  PinToken(const PinToken&) = delete;
  PinToken& operator=(const PinToken&) = delete;
  PinToken(PinToken&& o) noexcept
      : store_(std::exchange(o.store_, nullptr)), words_(std::exchange(o.words_, 0)) {}
  PinToken& operator=(PinToken&& o) noexcept {
    if (this != &o) {
      release();
      store_ = std::exchange(o.store_, nullptr);
      words_ = std::exchange(o.words_, 0);
    }
    return *this;
  }
  ~PinToken() { release(); }

  std::uint64_t words() const { return words_; }
  bool active() const { return store_ != nullptr; }
  inline void release();

 private:
  friend class BlockStore;
  PinToken(BlockStore* s, std::uint64_t w) : store_(s), words_(w) {}
  BlockStore* store_ = nullptr;
  std::uint64_t words_ = 0;
};

class BlockStore {
 public:
  explicit BlockStore(ModelParams params, StoreOptions opts = {})
      : params_(params), opts_(opts) {
    if (params_.b < 1) throw std::invalid_argument("store: B must be positive");
  }

  BlockStore(const BlockStore&) = delete;
  BlockStore& operator=(const BlockStore&) = delete;

  const ModelParams& params() const { return params_; }
  std::uint64_t block_words() const { return params_.b; }
  std::uint64_t memory_words() const { return params_.m; }

  BlockId alloc_block() {
    ++stats_.allocs;
    if (opts_.reuse_freed && !free_list_.empty()) {
      BlockId id{free_list_.back()};
      free_list_.pop_back();
      live_[id.index] = true;
      std::fill_n(blocks_.begin() + static_cast<std::ptrdiff_t>(id.index * params_.b),
                  params_.b, Word{0});
      return id;
    }
    if (live_.size() >= opts_.max_blocks) {
      --stats_.allocs;
      throw CapacityError("store: disk capacity exhausted");
    }
    BlockId id{live_.size()};
    live_.push_back(true);
    blocks_.resize(blocks_.size() + params_.b, Word{0});
    return id;
  }

  void free_block(BlockId id) {
    check_live(id);
    live_[id.index] = false;
    free_list_.push_back(id.index);
  }

  void read_block(BlockId id, std::span<Word> out) {
    check_live(id);
    if (out.size() != params_.b) throw FaultError("store: read buffer must be B words");
    ++stats_.reads;
    auto src = raw(id);
    std::copy(src.begin(), src.end(), out.begin());
  }

  /// Reads into a fresh buffer. The buffer counts against the budget for the
  /// duration of the call, so the store must have B free words.
  std::vector<Word> read_block(BlockId id) {
    PinToken transient = pin(params_.b);
    std::vector<Word> out(params_.b);
    read_block(id, out);
    return out;
  }

  void write_block(BlockId id, std::span<const Word> data) {
    check_live(id);
    if (data.size() != params_.b) throw FaultError("store: write payload must be B words");
    ++stats_.writes;
    std::copy(data.begin(), data.end(),
              blocks_.begin() + static_cast<std::ptrdiff_t>(id.index * params_.b));
  }

  PinToken pin(std::uint64_t words) {
    if (opts_.enforce_budget && pinned_ + words > params_.m) {
      throw BudgetError("store: pin of " + std::to_string(words) + " words exceeds M=" +
                        std::to_string(params_.m) + " (pinned " + std::to_string(pinned_) +
                        ")");
    }
    pinned_ += words;
    peak_pinned_ = std::max(peak_pinned_, pinned_);
    return PinToken(this, words);
  }

  void unpin(PinToken& token) { token.release(); }

  std::uint64_t pinned_words() const { return pinned_; }
  std::uint64_t peak_pinned_words() const { return peak_pinned_; }
  void reset_peak() { peak_pinned_ = pinned_; }

  IoStats snapshot_stats() const { return stats_; }
  IoStats reset_stats() {
    IoStats old = stats_;
    stats_ = {};
    return old;
  }

  std::uint64_t block_count() const { return live_.size(); }
  std::uint64_t live_block_count() const {
    return static_cast<std::uint64_t>(std::count(live_.begin(), live_.end(), true));
  }

  /// Uncounted view for test-side inspection. Production code never calls it.
  std::span<const Word> peek_block(BlockId id) const {
    check_live(id);
    return {blocks_.data() + id.index * params_.b, params_.b};
  }

  // On-disk dump, all fields little-endian 64-bit words:
  //   magic "XPQEMX01", N, B, M, w, block_count, reads, writes, allocs,
  //   free_count, free ids[free_count], then block_count * B raw words.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("store: cannot open " + path);
    auto put = [&](std::uint64_t v) {
      unsigned char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
      out.write(reinterpret_cast<const char*>(bytes), 8);
    };
    out.write(kMagic, 8);
    for (auto v : {params_.n, params_.b, params_.m, params_.w,
                   static_cast<std::uint64_t>(live_.size()), stats_.reads, stats_.writes,
                   stats_.allocs, static_cast<std::uint64_t>(free_list_.size())})
      put(v);
    for (auto f : free_list_) put(f);
    for (auto word : blocks_) put(word);
    if (!out) throw std::runtime_error("store: write failed for " + path);
  }

  static BlockStore load(const std::string& path, StoreOptions opts = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("store: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
      throw std::runtime_error("store: bad magic in " + path);
    auto get = [&]() {
      unsigned char bytes[8];
      in.read(reinterpret_cast<char*>(bytes), 8);
      if (!in) throw std::runtime_error("store: truncated file " + path);
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
      return v;
    };
    ModelParams p;
    p.n = get();
    p.b = get();
    p.m = get();
    p.w = get();
    BlockStore s(p, opts);
    const auto count = get();
    s.stats_.reads = get();
    s.stats_.writes = get();
    s.stats_.allocs = get();
    const auto free_count = get();
    s.live_.assign(count, true);
    for (std::uint64_t i = 0; i < free_count; ++i) {
      auto f = get();
      if (f >= count) throw std::runtime_error("store: bad free id in " + path);
      s.free_list_.push_back(f);
      s.live_[f] = false;
    }
    s.blocks_.resize(count * p.b);
    for (auto& word : s.blocks_) word = get();
    return s;
  }

  BlockStore(BlockStore&&) = default;

 private:
  friend class PinToken;
  static constexpr char kMagic[8] = {'X', 'P', 'Q', 'E', 'M', 'X', '0', '1'};

  void check_live(BlockId id) const {
    if (id.index >= live_.size() || !live_[id.index])
      throw FaultError("store: access to unallocated block " + std::to_string(id.index));
  }
  std::span<const Word> raw(BlockId id) const {
    return {blocks_.data() + id.index * params_.b, params_.b};
  }
  void release_words(std::uint64_t words) { pinned_ -= words; }

  ModelParams params_;
  StoreOptions opts_;
  std::vector<Word> blocks_;
  std::vector<bool> live_;
  std::vector<std::uint64_t> free_list_;
  IoStats stats_;
  std::uint64_t pinned_ = 0;
  std::uint64_t peak_pinned_ = 0;
};

inline void PinToken::release() {
  if (store_ != nullptr) {
    store_->release_words(words_);
    store_ = nullptr;
    words_ = 0;
  }
}

}  // namespace xpq::emx
