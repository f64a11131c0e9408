#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "xpq/emx.hpp"

using namespace xpq::emx;

namespace {

ModelParams small() { return {256, 4, 64, 64}; }

}  // namespace

TEST(Emx, FirstAllocIsZero) {
  BlockStore s(small());
  EXPECT_EQ(s.alloc_block(), BlockId{0});
  EXPECT_EQ(s.snapshot_stats().allocs, 1u);
  EXPECT_NE(s.alloc_block(), BlockId{0});
}

TEST(Emx, FreshBlockReadsZeros) {
  BlockStore s(small());
  const auto id = s.alloc_block();
  EXPECT_EQ(s.read_block(id), std::vector<Word>(4, 0));
  EXPECT_EQ(s.snapshot_stats().reads, 1u);
}

TEST(Emx, RoundTripAndLastWriterWins) {
  BlockStore s(small());
  const auto id = s.alloc_block();
  std::vector<Word> x{1, 2, 3, 4}, y{5, 6, 7, 8};
  s.write_block(id, x);
  EXPECT_EQ(s.read_block(id), x);
  s.write_block(id, y);
  EXPECT_EQ(s.read_block(id), y);
}

TEST(Emx, CountsReadsAndWrites) {
  BlockStore s(small());
  const auto id = s.alloc_block();
  std::vector<Word> buf(4);
  s.write_block(id, buf);
  s.write_block(id, buf);
  for (int i = 0; i < 3; ++i) s.read_block(id, buf);
  const auto st = s.snapshot_stats();
  EXPECT_EQ(st.reads, 3u);
  EXPECT_EQ(st.writes, 2u);
  EXPECT_EQ(st.transfers(), 5u);
}

TEST(Emx, ResetThenRead) {
  BlockStore s(small());
  const auto id = s.alloc_block();
  s.read_block(id);
  s.reset_stats();
  for (int i = 0; i < 7; ++i) s.read_block(id);
  EXPECT_EQ(s.snapshot_stats().reads, 7u);
  EXPECT_EQ(s.snapshot_stats().writes, 0u);
}

TEST(Emx, WrongPayloadSizeFaults) {
  BlockStore s(small());
  const auto id = s.alloc_block();
  std::vector<Word> three(3);
  EXPECT_THROW(s.write_block(id, three), FaultError);
  EXPECT_THROW(s.read_block(BlockId{99}), FaultError);
}

TEST(Emx, FreedBlockFaults) {
  BlockStore s(small());
  const auto id = s.alloc_block();
  s.free_block(id);
  EXPECT_THROW(s.read_block(id), FaultError);
}

// Replays a random alloc/free sequence against a LIFO free list.
TEST(Emx, ReuseMatchesFreeListReplay) {
  BlockStore s(small());
  std::mt19937_64 rng(11);
  std::vector<std::uint64_t> free_stack;
  std::vector<std::uint64_t> live;
  std::uint64_t next = 0;
  for (int i = 0; i < 2000; ++i) {
    if (live.empty() || rng() % 3 != 0) {
      std::uint64_t expect;
      if (!free_stack.empty()) {
        expect = free_stack.back();
        free_stack.pop_back();
      } else {
        expect = next++;
      }
      const auto id = s.alloc_block();
      ASSERT_EQ(id.index, expect) << "step " << i;
      EXPECT_EQ(s.read_block(id), std::vector<Word>(4, 0));
      live.push_back(expect);
    } else {
      const auto j = rng() % live.size();
      s.free_block(BlockId{live[j]});
      free_stack.push_back(live[j]);
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(j));
    }
  }
}

TEST(Emx, ReuseDisabledNeverRecycles) {
  BlockStore s(small(), StoreOptions{.reuse_freed = false});
  const auto a = s.alloc_block();
  s.free_block(a);
  EXPECT_NE(s.alloc_block(), a);
}

TEST(Emx, DiskCapacity) {
  BlockStore s(small(), StoreOptions{.max_blocks = 2});
  s.alloc_block();
  s.alloc_block();
  EXPECT_THROW(s.alloc_block(), CapacityError);
}

TEST(Emx, PinBoundary) {
  BlockStore s(small());
  auto all = s.pin(64);
  EXPECT_THROW(s.pin(1), BudgetError);
  all.release();
  EXPECT_EQ(s.pinned_words(), 0u);
  auto again = s.pin(64);
  EXPECT_EQ(s.peak_pinned_words(), 64u);
}

TEST(Emx, PinTokenScope) {
  BlockStore s(small());
  {
    auto a = s.pin(10);
    auto b = std::move(a);
    EXPECT_EQ(s.pinned_words(), 10u);
  }
  EXPECT_EQ(s.pinned_words(), 0u);
}

TEST(Emx, UnenforcedBudgetStillRecordsPeak) {
  BlockStore s(small(), StoreOptions{.enforce_budget = false});
  auto a = s.pin(100);
  EXPECT_EQ(s.peak_pinned_words(), 100u);
}

TEST(Emx, SaveLoadRoundTrip) {
  BlockStore s(small());
  const auto a = s.alloc_block();
  const auto b = s.alloc_block();
  s.alloc_block();
  s.write_block(a, std::vector<Word>{9, 8, 7, 6});
  s.write_block(b, std::vector<Word>{1, 1, 2, 3});
  s.free_block(b);
  const auto path = (std::filesystem::temp_directory_path() / "xpq_emx_roundtrip.bin").string();
  s.save(path);
  auto t = BlockStore::load(path);
  std::remove(path.c_str());
  EXPECT_EQ(t.snapshot_stats(), s.snapshot_stats());
  EXPECT_EQ(t.block_count(), 3u);
  EXPECT_EQ(t.live_block_count(), 2u);
  EXPECT_EQ(std::vector<Word>(t.peek_block(a).begin(), t.peek_block(a).end()),
            (std::vector<Word>{9, 8, 7, 6}));
  EXPECT_THROW(t.read_block(b), FaultError);
  EXPECT_EQ(t.alloc_block(), b);
}

TEST(Emx, LoadRejectsGarbage) {
  const auto path = (std::filesystem::temp_directory_path() / "xpq_emx_garbage.bin").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not a dump", f);
    std::fclose(f);
  }
  EXPECT_THROW(BlockStore::load(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(Emx, ModelValidation) {
  EXPECT_THROW((ModelParams{256, 1, 64, 64}.validate()), std::invalid_argument);
  EXPECT_THROW((ModelParams{32, 4, 64, 64}.validate()), std::invalid_argument);
  EXPECT_THROW((ModelParams{256, 4, 64, 8}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((ModelParams{256, 4, 64, 10}.validate()));
}
