#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "xpq/oracle.hpp"
#include "xpq/pq.hpp"

using namespace xpq;

namespace {

// N=256, B=4, t=2: tB=8, 32 leaves, h=5. Node 1 covers keys 1..128 and
// node 2 covers 129..256.
class Scenario : public ::testing::Test {
 protected:
  explicit Scenario(std::uint64_t inject = 0)
      : store_({256, 4, 256, 64}, emx::StoreOptions{.enforce_budget = false}),
        tree_(config(inject), store_),
        marks_(&tree_) {
    tree_.set_observer(&marks_);
  }

  static TreeConfig config(std::uint64_t inject) {
    auto c = TreeConfig::make({256, 4, 256, 64}, 2, 1.0 / 64, 1);
    c.inject_fp_every = inject;
    return c;
  }

  NodeView node(std::vector<Entry> list, std::vector<Signal> todo = {},
                std::vector<Signal> signals = {}) {
    NodeView v;
    std::sort(list.begin(), list.end(), [](const Entry& a, const Entry& b) { return rank_of(a) > rank_of(b); });
    v.boundary = list.empty() ? Rank::infinite() : rank_of(list.front());
    v.active = true;
    v.list = std::move(list);
    v.todo = std::move(todo);
    v.signals = std::move(signals);
    return v;
  }

  void expect_invariants() {
    const auto rep = oracle::check_invariants(tree_.snapshot(), marks_);
    EXPECT_TRUE(rep.ok()) << rep.to_text();
  }

  emx::BlockStore store_;
  Tree tree_;
  oracle::MarkLog marks_;
};

class InjectedScenario : public Scenario {
 protected:
  InjectedScenario() : Scenario(1) {}
};

}  // namespace

TEST(Layout, LeafOf) {
  emx::BlockStore s({256, 4, 256, 64}, emx::StoreOptions{.enforce_budget = false});
  Tree t(TreeConfig::make({256, 4, 256, 64}, 2, 1.0 / 64), s);
  EXPECT_EQ(t.leaf_of(1), 1u);
  EXPECT_EQ(t.leaf_of(8), 1u);
  EXPECT_EQ(t.leaf_of(9), 2u);
  EXPECT_EQ(t.leaf_of(256), 32u);
  EXPECT_THROW(t.leaf_of(0), DomainError);
  EXPECT_THROW(t.leaf_of(257), DomainError);
}

TEST(Layout, Topology) {
  Topology topo(2, 8, 256);
  EXPECT_EQ(topo.height(), 5u);
  EXPECT_EQ(topo.node_count(), 63u);
  EXPECT_EQ(topo.children(0), (std::vector<NodeId>{1, 2}));
  EXPECT_EQ(topo.parent(5), 2u);
  const auto path = topo.path_up(256);
  EXPECT_EQ(path.size(), 6u);
  EXPECT_EQ(path.front(), 62u);
  EXPECT_EQ(path.back(), 0u);
  // Uneven last level: 5 leaves at fanout 3.
  Topology odd(3, 4, 20);
  EXPECT_EQ(odd.height(), 2u);
  EXPECT_EQ(odd.children(1).size(), 3u);
  EXPECT_EQ(odd.children(2).size(), 2u);
}

TEST(Layout, ConfigDefaults) {
  const auto c = TreeConfig::make({1 << 16, 64, 1 << 14, 64});
  EXPECT_EQ(c.t, 2u);
  EXPECT_DOUBLE_EQ(c.epsilon, 1.0 / 4096);
  EXPECT_THROW(TreeConfig::make({256, 4, 8, 64}, 2), std::invalid_argument);
  const auto d = TreeConfig::make({1 << 16, 64, 1 << 14, 64}, 4, 1.0 / 1024);
  EXPECT_EQ(d.height(), 4u);
  EXPECT_EQ(d.list_limit(), 512u);
}

TEST_F(Scenario, UpdateOnEmptyTree) {
  tree_.update(5, 10);
  const auto root = tree_.inspect(0);
  EXPECT_EQ(root.list, (std::vector<Entry>{{5, 10}}));
  EXPECT_EQ(root.signals, (std::vector<Signal>{Signal::del(5)}));
  expect_invariants();
}

TEST_F(Scenario, DecreaseInRootList) {
  tree_.update(5, 10);
  tree_.update(5, 3);
  const auto root = tree_.inspect(0);
  EXPECT_EQ(root.list, (std::vector<Entry>{{5, 3}}));
  EXPECT_EQ(root.signals, (std::vector<Signal>{Signal::del(5)}));
  EXPECT_EQ(oracle::final_priority(tree_.snapshot(), 5, 0), 3u);
  tree_.update(5, 20);
  EXPECT_EQ(tree_.inspect(0).list, (std::vector<Entry>{{5, 3}}));
  expect_invariants();
}

TEST_F(Scenario, DeleteFromRootRefills) {
  tree_.update(5, 3);
  const auto before = tree_.proc_record(Proc::FillUp).calls;
  tree_.erase(5);
  EXPECT_TRUE(tree_.inspect(0).list.empty());
  EXPECT_GT(tree_.proc_record(Proc::FillUp).calls, before);
  EXPECT_EQ(tree_.extract_min(), std::nullopt);
}

TEST_F(Scenario, DeleteAbsentKey) {
  tree_.update(5, 3);
  tree_.erase(9);
  const auto root = tree_.inspect(0);
  EXPECT_EQ(root.signals.back(), Signal::del(9));
  EXPECT_EQ(tree_.extract_min(), (Entry{5, 3}));
  EXPECT_EQ(tree_.extract_min(), std::nullopt);
}

TEST_F(Scenario, ExtractMin) {
  EXPECT_EQ(tree_.extract_min(), std::nullopt);
  tree_.update(5, 3);
  tree_.update(7, 1);
  EXPECT_EQ(tree_.extract_min(), (Entry{7, 1}));
  EXPECT_EQ(tree_.extract_min(), (Entry{5, 3}));
}

TEST_F(Scenario, TieBreakAscendingKey) {
  tree_.update(5, 4);
  tree_.update(2, 4);
  EXPECT_EQ(tree_.extract_min(), (Entry{2, 4}));
  EXPECT_EQ(tree_.extract_min(), (Entry{5, 4}));
}

TEST_F(Scenario, RejectsBadArguments) {
  EXPECT_THROW(tree_.update(0, 1), DomainError);
  EXPECT_THROW(tree_.update(257, 1), DomainError);
  EXPECT_THROW(tree_.update(3, kInfinity), DomainError);
  EXPECT_THROW(tree_.erase(300), DomainError);
}

TEST_F(Scenario, PushUpdateAboveBoundaryGoesToSignals) {
  tree_.load_node(0, node({{30, 1}}, {}, {Signal::update(3, 9)}));
  tree_.load_node(1, node({{20, 5}}));
  tree_.push_signal(0);
  const auto c = tree_.inspect(1);
  EXPECT_TRUE(c.todo.empty());
  EXPECT_EQ(c.signals, (std::vector<Signal>{Signal::update(3, 9)}));
  EXPECT_TRUE(tree_.inspect(0).signals.empty());
  expect_invariants();
}

TEST_F(Scenario, PushUpdateBelowBoundaryGoesToTodo) {
  tree_.load_node(0, node({{30, 1}}, {}, {Signal::update(3, 2)}));
  tree_.load_node(1, node({{20, 5}}));
  tree_.push_signal(0);
  const auto c = tree_.inspect(1);
  EXPECT_EQ(c.todo, (std::vector<Signal>{Signal::update(3, 2)}));
  EXPECT_EQ(c.signals, (std::vector<Signal>{Signal::del(3)}));
  expect_invariants();
}

TEST_F(Scenario, PushDeleteOfListedKey) {
  tree_.load_node(0, node({{30, 1}}, {}, {Signal::del(20)}));
  tree_.load_node(1, node({{20, 5}, {21, 6}}));
  tree_.push_signal(0);
  const auto c = tree_.inspect(1);
  EXPECT_EQ(c.todo, (std::vector<Signal>{Signal::del(20)}));
  EXPECT_EQ(c.signals, (std::vector<Signal>{Signal::del(20)}));
  expect_invariants();
}

TEST_F(Scenario, PushToLeafGoesToTodo) {
  // Node 31 is the first leaf; its parent is node 15.
  tree_.load_node(0, node({{100, 1}}));
  tree_.load_node(1, node({{100, 2}}));
  tree_.load_node(3, node({{100, 3}}));
  tree_.load_node(7, node({{100, 4}}));
  tree_.load_node(15, node({{50, 5}}, {}, {Signal::update(3, 9)}));
  tree_.push_signal(15);
  EXPECT_EQ(tree_.inspect(31).todo, (std::vector<Signal>{Signal::update(3, 9)}));
}

TEST_F(Scenario, CheckInActual) {
  tree_.load_node(1, node({{20, 5}}, {Signal::update(4, 1)}));
  EXPECT_TRUE(tree_.check_in_actual(4, 1));
  EXPECT_TRUE(tree_.check_in_actual(20, 1));
  EXPECT_FALSE(tree_.check_in_actual(3, 1));
}

TEST_F(InjectedScenario, CheckInActualFalsePositive) {
  tree_.load_node(1, node({{20, 5}}));
  EXPECT_TRUE(tree_.check_in_actual(3, 1));
}

TEST_F(InjectedScenario, FalsePositiveRoutingMarksNode) {
  tree_.load_node(0, node({{30, 1}}, {}, {Signal::update(3, 9)}));
  tree_.load_node(1, node({{20, 5}}));
  tree_.push_signal(0);
  EXPECT_EQ(tree_.inspect(1).todo, (std::vector<Signal>{Signal::update(3, 9)}));
  EXPECT_TRUE(marks_.marked(3, 1));
  expect_invariants();
  // Applying the todo buffer detects the error and sends the update down.
  tree_.apply_todo(1);
  const auto c = tree_.inspect(1);
  EXPECT_EQ(c.list, (std::vector<Entry>{{20, 5}}));
  EXPECT_EQ(c.signals, (std::vector<Signal>{Signal::update(3, 9)}));
  EXPECT_FALSE(marks_.marked(3, 1));
  expect_invariants();
}

TEST_F(Scenario, ApplyTodoDelete) {
  tree_.load_node(1, node({{3, 8}, {4, 2}}, {Signal::del(3)}));
  tree_.apply_todo(1);
  const auto c = tree_.inspect(1);
  EXPECT_EQ(c.list, (std::vector<Entry>{{4, 2}}));
  EXPECT_EQ(c.boundary, (Rank{2, 4}));
  EXPECT_TRUE(c.todo.empty());
  ASSERT_TRUE(c.filter.has_value());
  EXPECT_TRUE(c.filter->contains(4));
}

TEST_F(Scenario, ApplyTodoAboveBoundaryMovesToSignals) {
  auto v = node({{20, 5}}, {Signal::update(3, 9)});
  tree_.load_node(1, v);
  tree_.apply_todo(1);
  const auto c = tree_.inspect(1);
  EXPECT_EQ(c.list, (std::vector<Entry>{{20, 5}}));
  EXPECT_EQ(c.signals, (std::vector<Signal>{Signal::update(3, 9)}));
}

TEST_F(Scenario, ApplyEmptyTodoIsNoop) {
  tree_.load_node(1, node({{20, 5}}, {}, {Signal::del(7)}));
  const auto before = tree_.inspect(1);
  const auto io = store_.snapshot_stats();
  tree_.apply_todo(1);
  const auto after = tree_.inspect(1);
  EXPECT_EQ(after.list, before.list);
  EXPECT_EQ(after.signals, before.signals);
  EXPECT_EQ(after.boundary, before.boundary);
  EXPECT_EQ((store_.snapshot_stats() - io).writes, 0u);
}

TEST_F(Scenario, EmptyListSplitsByKeyRange) {
  std::vector<Entry> entries;
  for (Key k = 1; k <= 17; ++k) entries.push_back({k * 15, 100 - k});  // keys 15..255
  tree_.load_node(0, node(entries));
  tree_.empty_list(0);
  auto root = tree_.inspect(0);
  ASSERT_EQ(root.list.size(), 8u);
  std::vector<Entry> sorted = entries;
  std::sort(sorted.begin(), sorted.end(), [](const Entry& a, const Entry& b) { return rank_of(a) < rank_of(b); });
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(root.list[7 - i], sorted[i]);
  const auto left = tree_.inspect(1), right = tree_.inspect(2);
  EXPECT_EQ(left.list.size() + right.list.size(), 9u);
  for (const auto& e : left.list) EXPECT_LE(e.key, 128u);
  for (const auto& e : right.list) EXPECT_GT(e.key, 128u);
  for (const auto& e : left.list) EXPECT_TRUE(left.filter->contains(e.key));
  EXPECT_EQ(root.boundary, rank_of(root.list.front()));
  expect_invariants();
}

TEST_F(Scenario, EmptyListOverPendingDelete) {
  std::vector<Entry> entries;
  for (Key k = 1; k <= 17; ++k) entries.push_back({k, k});
  tree_.load_node(0, node(entries));
  tree_.load_node(1, node({}, {Signal::del(17)}));
  tree_.empty_list(0);
  const auto c = tree_.inspect(1);
  EXPECT_EQ(std::count(c.todo.begin(), c.todo.end(), Signal::update(17, 17)), 1);
  EXPECT_EQ(std::count(c.todo.begin(), c.todo.end(), Signal::del(17)), 0);
  EXPECT_FALSE(tree_.inspect_list_contains(1, 17));
  expect_invariants();
}

TEST_F(Scenario, FillUpTakesChildEntries) {
  auto root = node({});
  root.active = true;
  tree_.load_node(0, root);
  tree_.load_node(1, node({{9, 7}, {2, 5}}));
  const auto before = tree_.proc_record(Proc::FillUp).calls;
  tree_.fill_up(0);
  EXPECT_EQ(tree_.inspect(0).list, (std::vector<Entry>{{9, 7}, {2, 5}}));
  EXPECT_TRUE(tree_.inspect(1).list.empty());
  EXPECT_GE(tree_.proc_record(Proc::FillUp).calls, before + 2);
  expect_invariants();
}

TEST_F(Scenario, FillUpPrefersTodoUpdate) {
  std::vector<Entry> list{{9, 5}};
  for (Key k = 20; k < 28; ++k) list.push_back({k, k});
  auto root = node({});
  tree_.load_node(0, root);
  tree_.load_node(1, node(list, {Signal::update(4, 1)}));
  tree_.fill_up(0);
  const auto r = tree_.inspect(0);
  ASSERT_EQ(r.list.size(), 8u);
  EXPECT_EQ(r.list.back(), (Entry{4, 1}));
  EXPECT_EQ(r.list[6], (Entry{9, 5}));
  const auto c = tree_.inspect(1);
  EXPECT_EQ(c.todo, (std::vector<Signal>{Signal::del(4)}));
  EXPECT_EQ(c.list.size(), 2u);
  expect_invariants();
}

TEST_F(Scenario, FillUpOnExhaustedTree) {
  auto root = node({});
  tree_.load_node(0, root);
  tree_.fill_up(0);
  const auto r = tree_.inspect(0);
  EXPECT_TRUE(r.list.empty());
  EXPECT_TRUE(r.boundary.is_infinite());
  EXPECT_EQ(tree_.extract_min(), std::nullopt);
}

TEST_F(Scenario, SizeWordsOfEmptyNodes) {
  const auto internal = Tree::kHeaderWords + filter::Filter(tree_.config().filter_params(1)).serialized_words();
  EXPECT_EQ(tree_.size_words(1), internal);
  EXPECT_EQ(tree_.size_words(31), Tree::kHeaderWords);
}

TEST_F(Scenario, RandomOpsMatchReference) {
  oracle::RefQueue ref;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5000; ++i) {
    const auto r = rng() % 10;
    const Key k = rng() % 256 + 1;
    if (r < 6) {
      const Priority p = rng() % 1000;
      tree_.update(k, p);
      ref.update(k, p);
    } else if (r < 8) {
      tree_.erase(k);
      ref.erase(k);
    } else {
      ASSERT_EQ(tree_.extract_min(), ref.extract_min()) << "op " << i;
    }
  }
  while (auto e = ref.extract_min()) ASSERT_EQ(tree_.extract_min(), e);
  EXPECT_EQ(tree_.extract_min(), std::nullopt);
  for (unsigned p = 0; p < 4; ++p) EXPECT_GT(tree_.proc_record(static_cast<Proc>(p)).calls, 0u);
}

TEST(Budget, DeskScaleFitsInMemory) {
  const emx::ModelParams model{1 << 16, 64, 1 << 14, 64};
  emx::BlockStore s(model);
  Tree t(TreeConfig::make(model, 4, 1.0 / 1024, 1), s);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20000; ++i) {
    const Key k = rng() % model.n + 1;
    if (rng() % 4 != 0)
      t.update(k, rng() % 100000);
    else
      t.extract_min();
  }
  EXPECT_LE(s.peak_pinned_words(), model.m);
  EXPECT_EQ(s.pinned_words(), t.config().list_limit() * 2 + 2 + 2 * (t.config().signal_limit() + 1));
}

TEST(Encoding, RoundTrip) {
  Word w[2];
  for (const Entry e : {Entry{1, 0}, Entry{65536, 123456789}, Entry{7, kInfinity - 1}}) {
    encode(e, w);
    EXPECT_EQ(decode_entry(w), e);
  }
  for (const Signal s : {Signal::del(1), Signal::del(65536), Signal::update(3, 0), Signal::update(65536, 99)}) {
    encode(s, w);
    EXPECT_EQ(decode_signal(w), s);
  }
  encode(Signal::update(5, 9), w);
  EXPECT_EQ(w[0], kTagBit | 5);
  EXPECT_EQ(w[1], 9u);
}

TEST(Encoding, NodesSurviveTheStore) {
  emx::BlockStore s({256, 4, 256, 64}, emx::StoreOptions{.enforce_budget = false});
  Tree t(TreeConfig::make({256, 4, 256, 64}, 2, 1.0 / 64), s);
  NodeView v;
  v.list = {{100, 40}, {3, 9}, {60, 2}};
  v.boundary = Rank{40, 100};
  v.active = true;
  v.todo = {Signal::del(4), Signal::update(4, 1)};
  v.signals = {Signal::update(9, 50), Signal::del(12)};
  t.load_node(1, v);
  const auto back = t.inspect(1);
  EXPECT_EQ(back.list, v.list);
  EXPECT_EQ(back.todo, v.todo);
  EXPECT_EQ(back.signals, v.signals);
  EXPECT_EQ(back.boundary, v.boundary);
  EXPECT_TRUE(back.active);
}
