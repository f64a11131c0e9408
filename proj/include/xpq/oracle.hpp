#pragma once

// Test-side ground truth: exact reference queues, the time-order evaluators
// Actual(k,v) and Final(k,v), marked-node bookkeeping, and checkers for the
// seven structural invariants. Everything here reads a TreeSnapshot and is
// never called by the queue itself.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xpq/pq.hpp"
#include "xpq/trace.hpp"
#include "xpq/types.hpp"

namespace xpq::oracle {

/// Exact priority queue with DecreaseKey semantics on an ordered index.
class RefQueue {
 public:
  void update(Key k, Priority p) {
    auto [it, inserted] = prio_.try_emplace(k, p);
    if (!inserted) {
      if (p >= it->second) return;
      order_.erase(rank_of(k, it->second));
      it->second = p;
    }
    order_.insert(rank_of(k, p));
  }
  void erase(Key k) {
    if (auto it = prio_.find(k); it != prio_.end()) {
      order_.erase(rank_of(k, it->second));
      prio_.erase(it);
    }
  }
  std::optional<Entry> extract_min() {
    if (order_.empty()) return std::nullopt;
    const Rank r = *order_.begin();
    erase(r.key);
    return Entry{r.key, r.priority};
  }
  std::optional<Entry> apply(const Op& op) {
    switch (op.kind) {
      case Op::Kind::Update: update(op.key, op.priority); return std::nullopt;
      case Op::Kind::Delete: erase(op.key); return std::nullopt;
      case Op::Kind::Extract: return extract_min();
    }
    return std::nullopt;
  }
  std::optional<Priority> priority(Key k) const {
    auto it = prio_.find(k);
    if (it == prio_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t size() const { return prio_.size(); }
  const std::map<Key, Priority>& items() const { return prio_; }

 private:
  std::map<Key, Priority> prio_;
  std::set<Rank> order_;
};

/// Second reference: unsorted vector with linear scans.
class NaiveQueue {
 public:
  std::optional<Entry> apply(const Op& op) {
    auto it = std::find_if(items_.begin(), items_.end(),
                           [&](const Entry& e) { return e.key == op.key; });
    switch (op.kind) {
      case Op::Kind::Update:
        if (it == items_.end())
          items_.push_back({op.key, op.priority});
        else if (op.priority < it->priority)
          it->priority = op.priority;
        return std::nullopt;
      case Op::Kind::Delete:
        if (it != items_.end()) items_.erase(it);
        return std::nullopt;
      case Op::Kind::Extract: {
        if (items_.empty()) return std::nullopt;
        auto best = std::min_element(items_.begin(), items_.end(),
                                     [](const Entry& a, const Entry& b) { return rank_of(a) < rank_of(b); });
        const Entry e = *best;
        items_.erase(best);
        return e;
      }
    }
    return std::nullopt;
  }

 private:
  std::vector<Entry> items_;
};

inline constexpr Priority kAbsent = kInfinity;

/// Actual(k,v): the list priority of k folded through v's todo buffer.
inline Priority actual_priority(const NodeView& v, Key k) {
  Priority a = kAbsent;
  for (const auto& e : v.list)
    if (e.key == k) a = e.priority;
  for (const auto& s : v.todo) {
    if (s.key != k) continue;
    if (s.is_delete())
      a = kAbsent;
    else
      a = std::min(a, s.priority);
  }
  return a;
}

/// Marked sets M_k, maintained from the queue's observer hooks.
class MarkLog : public TreeObserver {
 public:
  explicit MarkLog(const Tree* tree = nullptr) : tree_(tree) {}

  void on_filter_routed_update(Key k, NodeId c) override;
  void on_pushed_to(Key k, NodeId c) override { unmark(k, c); }
  void on_todo_applied(NodeId c) override {
    for (auto it = marks_.begin(); it != marks_.end();) {
      it->second.erase(c);
      it = it->second.empty() ? marks_.erase(it) : std::next(it);
    }
  }

  void mark(Key k, NodeId v) { marks_[k].insert(v); }
  void unmark(Key k, NodeId v) {
    if (auto it = marks_.find(k); it != marks_.end()) {
      it->second.erase(v);
      if (it->second.empty()) marks_.erase(it);
    }
  }
  bool marked(Key k, NodeId v) const {
    auto it = marks_.find(k);
    return it != marks_.end() && it->second.count(v) != 0;
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [k, s] : marks_) n += s.size();
    return n;
  }
  const std::map<Key, std::set<NodeId>>& sets() const { return marks_; }
  /// Nodes marked so far, counting repeats.
  std::uint64_t events() const { return events_; }

 private:
  const Tree* tree_;
  std::uint64_t events_ = 0;
  std::map<Key, std::set<NodeId>> marks_;
};


// The routing is an error when c holds no actual entry for k, whether the
// list lacks k or a Delete(k) already sits in c's todo buffer.
inline void MarkLog::on_filter_routed_update(Key k, NodeId c) {
  if (tree_ == nullptr || actual_priority(tree_->inspect(c), k) == kAbsent) {
    marks_[k].insert(c);
    ++events_;
  }
}

/// Final(k,v) for v on the path from Leaf(k) to the root.
inline Priority final_priority(const TreeSnapshot& t, Key k, NodeId v) {
  const auto& node = t.nodes.at(v);
  if (node.leaf) return actual_priority(node, k);
  Priority f = final_priority(t, k, t.topology.child_toward(v, k));
  for (const auto& s : node.signals) {
    if (s.key != k) continue;
    if (s.is_delete())
      f = kAbsent;
    else
      f = std::min(f, s.priority);
  }
  return std::min(f, actual_priority(node, k));
}

struct Violation {
  int invariant = 0;  // 1..7; 0 for structural checks (order, capacity, placement)
  NodeId node = 0;
  std::string node_path;
  Key key = 0;
  std::string detail;
};

struct Report {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(int invariant) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.invariant == invariant; });
  }
  /// One line per violation: "inv=<id> node=<path> key=<k> <detail>".
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& v : violations)
      os << "inv=" << v.invariant << " node=" << v.node_path << " key=" << v.key << ' '
         << v.detail << '\n';
    return os.str();
  }
};

/// "root/2/0": child positions from the root down to v.
inline std::string node_path(const Topology& topo, NodeId v) {
  std::vector<std::uint64_t> steps;
  while (!topo.is_root(v)) {
    steps.push_back(topo.index(v) % topo.t());
    v = topo.parent(v);
  }
  std::string out = "root";
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) out += "/" + std::to_string(*it);
  return out;
}

namespace detail {

inline std::string show_rank(const Rank& r) {
  if (r.is_infinite()) return "+inf";
  return "(" + std::to_string(r.priority) + "," + std::to_string(r.key) + ")";
}

class Checker {
 public:
  Checker(const TreeSnapshot& t, const MarkLog& marks, const RefQueue* ref)
      : t_(t), topo_(t.topology), marks_(marks), ref_(ref) {}

  Report run() {
    structural();
    std::set<Key> keys;
    for (const auto& n : t_.nodes) {
      for (const auto& e : n.list) keys.insert(e.key);
      for (const auto& s : n.signals) keys.insert(s.key);
      for (const auto& s : n.todo) keys.insert(s.key);
    }
    if (ref_ != nullptr)
      for (const auto& [k, p] : ref_->items()) keys.insert(k);
    for (const auto& [k, nodes] : marks_.sets()) keys.insert(k);
    for (Key k : keys) per_key(k);
    for (NodeId v = 1; v < t_.nodes.size(); ++v) {
      const NodeId u = topo_.parent(v);
      if (t_.nodes[v].boundary < t_.nodes[u].boundary)
        add(4, v, 0, "Boundary " + show_rank(t_.nodes[v].boundary) + " below parent's " +
                         show_rank(t_.nodes[u].boundary));
    }
    return std::move(report_);
  }

 private:
  void add(int inv, NodeId v, Key k, std::string detail) {
    report_.violations.push_back({inv, v, node_path(topo_, v), k, std::move(detail)});
  }

  void structural() {
    const auto& cfg = t_.config;
    for (const auto& n : t_.nodes) {
      const auto v = n.id;
      for (std::size_t i = 1; i < n.list.size(); ++i)
        if (!(rank_of(n.list[i - 1]) > rank_of(n.list[i])))
          add(0, v, n.list[i].key, "list not strictly descending at position " + std::to_string(i));
      if (n.list.size() > cfg.list_limit())
        add(0, v, 0, "list holds " + std::to_string(n.list.size()) + " entries");
      if (n.signals.size() > cfg.signal_limit())
        add(0, v, 0, "signal buffer holds " + std::to_string(n.signals.size()) + " signals");
      if (n.todo.size() > cfg.todo_limit())
        add(0, v, 0, "todo buffer holds " + std::to_string(n.todo.size()) + " signals");
      if (n.leaf && !n.signals.empty()) add(0, v, 0, "leaf has a signal buffer");
      if (n.root && !n.todo.empty()) add(0, v, 0, "root has a todo buffer");
      if (n.filter)
        for (const auto& e : n.list)
          if (!n.filter->contains(e.key)) add(0, v, e.key, "filter misses a list key");
    }
  }

  // One time-ordered item for key k.
  struct Item {
    enum class Where { Signals, List, Todo } where;
    std::size_t depth;  // index into path (0 = leaf)
    Signal sig;
  };

  void per_key(Key k) {
    // Placement: k may only live on the path Leaf(k) -> root.
    const auto path = topo_.path_up(k);
    std::set<NodeId> on_path(path.begin(), path.end());
    for (const auto& n : t_.nodes) {
      if (on_path.count(n.id) != 0) continue;
      const bool found =
          std::any_of(n.list.begin(), n.list.end(), [&](const Entry& e) { return e.key == k; }) ||
          std::any_of(n.signals.begin(), n.signals.end(), [&](const Signal& s) { return s.key == k; }) ||
          std::any_of(n.todo.begin(), n.todo.end(), [&](const Signal& s) { return s.key == k; });
      if (found) add(0, n.id, k, "key stored off its leaf-to-root path");
    }

    std::vector<Priority> actual(path.size());
    for (std::size_t i = 0; i < path.size(); ++i) actual[i] = actual_priority(t_.nodes[path[i]], k);
    const auto node = [&](std::size_t i) -> const NodeView& { return t_.nodes[path[i]]; };
    const auto marked = [&](std::size_t i) { return marks_.marked(k, path[i]); };
    // Delete(k) in the signal buffer of any path node at depth in (lo, hi].
    const auto delete_between = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t d = lo + 1; d <= hi; ++d)
        for (const auto& s : node(d).signals)
          if (s.key == k && s.is_delete()) return true;
      return false;
    };

    // Invariant 1.
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (actual[i] == kAbsent) continue;
      for (std::size_t j = i + 1; j < path.size(); ++j) {
        if (actual[j] == kAbsent || marked(j)) continue;
        if (!delete_between(i, j))
          add(1, path[j], k,
              "finite copies here and at " + node_path(topo_, path[i]) +
                  " with no Delete between them");
      }
    }

    // Invariant 2.
    for (std::size_t j = 0; j < path.size(); ++j) {
      if (actual[j] == kAbsent || marked(j)) continue;
      for (std::size_t d = 0; d <= j; ++d) {
        const auto& sig = node(d).signals;
        for (std::size_t i = 0; i < sig.size(); ++i) {
          if (sig[i].key != k || !sig[i].is_update()) continue;
          bool deleted = false;
          for (std::size_t x = i + 1; x < sig.size() && !deleted; ++x)
            deleted = sig[x].key == k && sig[x].is_delete();
          if (!deleted) deleted = delete_between(d, j);
          if (!deleted)
            add(2, path[j], k,
                "Update in the signal buffer of " + node_path(topo_, path[d]) +
                    " is not followed by a Delete below this list");
        }
      }
    }

    // Invariant 3.
    if (ref_ != nullptr) {
      const Priority f = final_priority(t_, k, Topology::root());
      const Priority want = ref_->priority(k).value_or(kAbsent);
      if (f != want)
        add(3, Topology::root(), k,
            "Final=" + (f == kAbsent ? std::string("+inf") : std::to_string(f)) +
                " expected " + (want == kAbsent ? std::string("+inf") : std::to_string(want)));
    }

    // Invariants 4 and 5.
    for (std::size_t i = 0; i < path.size(); ++i) {
      const auto& v = node(i);
      if (actual[i] != kAbsent) {
        const Rank r = rank_of(k, actual[i]);
        for (std::size_t j = i + 1; j < path.size(); ++j)
          if (r < node(j).boundary)
            add(4, path[i], k,
                "Actual " + show_rank(r) + " below Boundary of ancestor " +
                    node_path(topo_, path[j]) + " " + show_rank(node(j).boundary));
        if (!marked(i) && r > v.boundary)
          add(5, path[i], k, "Actual " + show_rank(r) + " above Boundary " + show_rank(v.boundary));
      }
      for (const auto& s : v.signals)
        if (s.key == k && s.is_update() && rank_of(k, s.priority) < v.boundary)
          add(4, path[i], k, "Update in signal buffer below this node's Boundary");
    }

    // Invariants 6 and 7.
    for (std::size_t i = 0; i < path.size(); ++i) {
      const auto& v = node(i);
      std::vector<Signal> mine;
      for (const auto& s : v.todo)
        if (s.key == k) mine.push_back(s);
      const bool shape_ok =
          mine.empty() || (mine.size() == 1) ||
          (mine.size() == 2 && mine[0].is_delete() && mine[1].is_update());
      if (!shape_ok) add(6, path[i], k, "todo buffer holds " + std::to_string(mine.size()) + " signals for k in a disallowed order");
      if (!marked(i)) continue;
      // Either a lone Update with no list entry, or Delete(k) then Update(k,p)
      // when the wrongly routed Update arrived after a Delete.
      const bool lone = mine.size() == 1 && std::none_of(v.list.begin(), v.list.end(),
                                                         [&](const Entry& e) { return e.key == k; });
      const bool after_delete = mine.size() == 2 && mine[0].is_delete();
      const bool seven_ok = (lone || after_delete) && mine.back().is_update() &&
                            rank_of(k, mine.back().priority) > v.boundary;
      if (!seven_ok) add(7, path[i], k, "marked node does not hold a lone Update above its Boundary");
    }
  }

  const TreeSnapshot& t_;
  const Topology& topo_;
  const MarkLog& marks_;
  const RefQueue* ref_;
  Report report_;
};

}  // namespace detail

/// Evaluates the structural checks and Invariants 1-7 over a snapshot taken at
/// a quiescent point. Invariant 3 is checked only when a reference is given.
inline Report check_invariants(const TreeSnapshot& t, const MarkLog& marks,
                               const RefQueue* ref = nullptr) {
  return detail::Checker(t, marks, ref).run();
}

}  // namespace xpq::oracle
