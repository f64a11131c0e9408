#include <gtest/gtest.h>

#include <random>

#include "xpq/oracle.hpp"
#include "xpq/trace.hpp"

using namespace xpq;
using oracle::kAbsent;

TEST(RefQueue, ExtractReturnsInserted) {
  oracle::RefQueue q;
  EXPECT_EQ(q.apply(Op::update(5, 3)), std::nullopt);
  EXPECT_EQ(q.apply(Op::extract()), (Entry{5, 3}));
  EXPECT_EQ(q.apply(Op::extract()), std::nullopt);
}

TEST(RefQueue, UpdateOnlyLowers) {
  oracle::RefQueue q;
  q.apply(Op::update(5, 3));
  q.apply(Op::update(5, 9));
  EXPECT_EQ(q.priority(5), 3u);
  EXPECT_EQ(q.apply(Op::extract()), (Entry{5, 3}));
}

TEST(RefQueue, DeleteAndTies) {
  oracle::RefQueue q;
  q.update(5, 4);
  q.update(2, 4);
  q.update(9, 1);
  q.erase(9);
  q.erase(100);
  EXPECT_EQ(q.size(), 2u);
  EXPECT_EQ(q.extract_min(), (Entry{2, 4}));
}

TEST(RefQueue, AgreesWithNaiveScan) {
  oracle::RefQueue a;
  oracle::NaiveQueue b;
  std::mt19937_64 rng(17);
  for (int i = 0; i < 10000; ++i) {
    const auto r = rng() % 10;
    Op op = r < 6 ? Op::update(rng() % 300 + 1, rng() % 50) : r < 8 ? Op::del(rng() % 300 + 1) : Op::extract();
    ASSERT_EQ(a.apply(op), b.apply(op)) << "op " << i;
  }
}

namespace {

// N=256, B=4, t=2; key 5 lives on the path leaf 31 -> 15 -> 7 -> 3 -> 1 -> root.
struct Fixture {
  emx::BlockStore store{{256, 4, 256, 64}, emx::StoreOptions{.enforce_budget = false}};
  Tree tree{TreeConfig::make({256, 4, 256, 64}, 2, 1.0 / 64, 1), store};
  TreeSnapshot snap = tree.snapshot();
  oracle::MarkLog marks;

  NodeView& at(NodeId v) { return snap.nodes[v]; }
  void set_list(NodeId v, std::vector<Entry> list) {
    at(v).list = std::move(list);
    at(v).boundary = at(v).list.empty() ? Rank::infinite() : rank_of(at(v).list.front());
    if (at(v).filter) at(v).filter = filter::Filter::rebuild(snap.config.filter_params(v), keys(at(v).list));
  }
  static std::vector<Key> keys(const std::vector<Entry>& l) {
    std::vector<Key> out;
    for (const auto& e : l) out.push_back(e.key);
    return out;
  }
  oracle::Report check(const oracle::RefQueue* ref = nullptr) {
    return oracle::check_invariants(snap, marks, ref);
  }
};

}  // namespace

TEST(ActualPriority, Folds) {
  NodeView v;
  v.list = {{5, 5}};
  EXPECT_EQ(oracle::actual_priority(v, 5), 5u);
  v.todo = {Signal::del(5), Signal::update(5, 7)};
  EXPECT_EQ(oracle::actual_priority(v, 5), 7u);
  EXPECT_EQ(oracle::actual_priority(v, 6), kAbsent);
}

TEST(FinalPriority, UpdateOverChild) {
  Fixture f;
  f.set_list(31, {{5, 5}});
  f.at(0).signals = {Signal::update(5, 2)};
  EXPECT_EQ(oracle::final_priority(f.snap, 5, 0), 2u);
  EXPECT_EQ(oracle::final_priority(f.snap, 5, 1), 5u);
}

TEST(FinalPriority, DeleteThenUpdate) {
  Fixture f;
  f.set_list(31, {{5, 5}});
  f.at(0).signals = {Signal::del(5), Signal::update(5, 9)};
  EXPECT_EQ(oracle::final_priority(f.snap, 5, 0), 9u);
  f.at(0).signals = {Signal::update(5, 9), Signal::del(5)};
  EXPECT_EQ(oracle::final_priority(f.snap, 5, 0), kAbsent);
}

TEST(Invariants, FreshTreePasses) {
  Fixture f;
  EXPECT_TRUE(f.check().ok());
}

TEST(Invariants, DuplicateCopies) {
  Fixture f;
  f.set_list(0, {{5, 3}});
  f.set_list(1, {{5, 4}});
  const auto rep = f.check();
  EXPECT_TRUE(rep.has(1)) << rep.to_text();
  // The lower node's own signal buffer is older than its list.
  f.at(1).signals = {Signal::del(5)};
  EXPECT_TRUE(f.check().has(1));
  f.at(1).signals.clear();
  f.at(0).signals = {Signal::del(5)};
  EXPECT_FALSE(f.check().has(1));
}

TEST(Invariants, UpdateWithoutDelete) {
  Fixture f;
  f.set_list(1, {{5, 2}});
  f.at(1).signals = {Signal::update(5, 9)};
  const auto rep = f.check();
  EXPECT_TRUE(rep.has(2)) << rep.to_text();
  f.at(1).signals.push_back(Signal::del(5));
  EXPECT_FALSE(f.check().has(2));
}

TEST(Invariants, FinalDisagreesWithReference) {
  Fixture f;
  oracle::RefQueue ref;
  ref.update(5, 3);
  EXPECT_TRUE(f.check(&ref).has(3));
  f.set_list(0, {{5, 3}});
  EXPECT_FALSE(f.check(&ref).has(3));
}

TEST(Invariants, BoundaryOrder) {
  Fixture f;
  f.set_list(0, {{7, 10}});
  f.set_list(1, {{5, 2}});
  const auto rep = f.check();
  EXPECT_TRUE(rep.has(4)) << rep.to_text();
}

TEST(Invariants, ActualAboveBoundary) {
  Fixture f;
  f.set_list(1, {{5, 9}});
  f.at(1).boundary = Rank{2, 1};
  EXPECT_TRUE(f.check().has(5));
}

TEST(Invariants, TodoShape) {
  Fixture f;
  f.at(1).todo = {Signal::update(5, 1), Signal::del(5)};
  EXPECT_TRUE(f.check().has(6));
  f.at(1).todo = {Signal::del(5), Signal::update(5, 1)};
  EXPECT_FALSE(f.check().has(6));
}

TEST(Invariants, MarkedNodeShape) {
  Fixture f;
  f.set_list(1, {{20, 4}});
  f.marks.mark(5, 1);
  EXPECT_TRUE(f.check().has(7));
  f.at(1).todo = {Signal::update(5, 9)};
  EXPECT_FALSE(f.check().has(7));
  f.at(1).todo = {Signal::update(5, 1)};  // not above the boundary
  EXPECT_TRUE(f.check().has(7));
}

TEST(Invariants, Structural) {
  Fixture f;
  f.at(1).list = {{5, 1}, {6, 2}};
  f.at(1).boundary = Rank{2, 6};
  f.at(2).list = {{7, 1}};  // key 7 belongs under node 1
  f.at(31).signals = {Signal::del(3)};
  const auto rep = f.check();
  EXPECT_TRUE(rep.has(0));
  EXPECT_GE(rep.violations.size(), 3u);
  EXPECT_NE(rep.to_text().find("inv=0 node=root/1 key=7"), std::string::npos) << rep.to_text();
}

TEST(Invariants, EveryPrefixOfRandomTrace) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    emx::BlockStore store({256, 4, 256, 64}, emx::StoreOptions{.enforce_budget = false});
    auto cfg = TreeConfig::make({256, 4, 256, 64}, 2, 1.0 / 64, seed);
    cfg.inject_fp_every = seed == 3 ? 25 : 0;
    Tree tree(cfg, store);
    oracle::MarkLog marks(&tree);
    tree.set_observer(&marks);
    oracle::RefQueue ref;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < 1000; ++i) {
      const auto r = rng() % 10;
      const Op op = r < 6 ? Op::update(rng() % 256 + 1, rng() % 1000) : r < 8 ? Op::del(rng() % 256 + 1) : Op::extract();
      switch (op.kind) {
        case Op::Kind::Update: tree.update(op.key, op.priority); break;
        case Op::Kind::Delete: tree.erase(op.key); break;
        case Op::Kind::Extract: ASSERT_EQ(tree.extract_min(), ref.apply(op)); break;
      }
      if (op.kind != Op::Kind::Extract) ref.apply(op);
      const auto rep = oracle::check_invariants(tree.snapshot(), marks, &ref);
      ASSERT_TRUE(rep.ok()) << "seed " << seed << " op " << i << "\n" << rep.to_text();
    }
  }
}
