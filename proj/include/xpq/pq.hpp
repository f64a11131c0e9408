#pragma once

// External-memory priority queue with DecreaseKey over integer keys {1..N}.
//
// A static t-ary tree. Every node owns a list of entries (descending by rank),
// a signal buffer of pending Delete/Update signals for its children, a todo
// buffer of signals to apply to its own list, a deletable membership filter
// over its list keys, and a boundary rank bounding its list from above. The
// root lives in memory; all other nodes live in the block store and are
// loaded piecewise by the four procedures (push_signal, apply_todo,
// empty_list, fill_up), each of which touches O(t) blocks of its own.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "xpq/emx.hpp"
#include "xpq/filter.hpp"
#include "xpq/region.hpp"
#include "xpq/types.hpp"

namespace xpq {

class DomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct TreeConfig {
  emx::ModelParams model;
  std::uint64_t t = 2;
  double epsilon = 1.0 / 64;
  std::uint64_t seed = 1;
  /// Test hook: every n-th filter probe answers "present" (0 disables).
  std::uint64_t inject_fp_every = 0;
  /// Test hook: push_signal stops forwarding Delete signals below internal
  /// children. Breaks the queue on purpose.
  bool drop_delete_forwarding = false;

  static std::uint64_t default_fanout(std::uint64_t n) {
    const double t = std::floor(std::pow(std::log2(static_cast<double>(n)), 0.01));
    return std::max<std::uint64_t>(2, static_cast<std::uint64_t>(t));
  }
  static double default_epsilon(std::uint64_t n) {
    const double lg = std::log2(static_cast<double>(n));
    return 1.0 / (lg * lg * lg);
  }

  static TreeConfig make(emx::ModelParams model, std::optional<std::uint64_t> t = std::nullopt,
                         std::optional<double> epsilon = std::nullopt, std::uint64_t seed = 1) {
    TreeConfig c;
    c.model = model;
    c.t = t.value_or(default_fanout(model.n));
    c.epsilon = epsilon.value_or(default_epsilon(model.n));
    c.seed = seed;
    c.validate();
    return c;
  }

  void validate() const {
    model.validate();
    if (t < 2) throw std::invalid_argument("tree: fanout t must be >= 2");
    if (model.m <= model.b * t) throw std::invalid_argument("tree: requires M > B*t");
    if (!(epsilon > 0.0 && epsilon < 1.0))
      throw std::invalid_argument("tree: epsilon must be in (0,1)");
  }

  std::uint64_t b() const { return model.b; }
  std::uint64_t tb() const { return t * model.b; }
  std::uint64_t leaves() const { return (model.n + tb() - 1) / tb(); }
  /// Smallest h with t^h >= number of leaves, i.e. ceil(log_t(N / tB)).
  unsigned height() const {
    unsigned h = 0;
    std::uint64_t span = 1;
    while (span < leaves()) {
      span *= t;
      ++h;
    }
    return h;
  }
  std::uint64_t list_limit() const { return 2 * tb(); }
  std::uint64_t signal_limit() const { return tb(); }
  std::uint64_t todo_limit() const { return model.b; }
  /// Largest list a node can hold transiently (an applied todo buffer on top
  /// of a full list).
  std::uint64_t list_capacity() const { return 2 * tb() + model.b + 1; }
  filter::FilterParams filter_params(std::uint64_t node) const {
    return {list_capacity(), epsilon, filter::splitmix64(seed ^ (node * 0x9e3779b97f4a7c15ULL))};
  }
};

using NodeId = std::uint64_t;

/// Static shape of the tree: levels 0 (root) .. h (leaves), nodes stored
/// level by level. Level l holds ceil(leaves / t^(h-l)) nodes.
class Topology {
 public:
  Topology() = default;
  explicit Topology(const TreeConfig& cfg) : Topology(cfg.t, cfg.tb(), cfg.model.n) {}

  /// Fanout t, leaf_span consecutive keys per leaf, keys {1..n}.
  Topology(std::uint64_t t, std::uint64_t leaf_span, std::uint64_t n) : t_(t), tb_(leaf_span), n_(n) {
    const auto leaves = (n + leaf_span - 1) / leaf_span;
    for (std::uint64_t span = 1; span < leaves; span *= t) ++h_;
    span_.assign(h_ + 1, 1);
    for (unsigned l = h_; l-- > 0;) span_[l] = span_[l + 1] * t_;
    offset_.assign(h_ + 2, 0);
    for (unsigned l = 0; l <= h_; ++l) {
      count_.push_back((leaves + span_[l] - 1) / span_[l]);
      offset_[l + 1] = offset_[l] + count_[l];
    }
  }

  std::uint64_t t() const { return t_; }
  unsigned height() const { return h_; }
  std::uint64_t node_count() const { return offset_[h_ + 1]; }
  static constexpr NodeId root() { return 0; }

  unsigned level(NodeId v) const {
    unsigned l = 0;
    while (offset_[l + 1] <= v) ++l;
    return l;
  }
  std::uint64_t index(NodeId v) const { return v - offset_[level(v)]; }
  NodeId node(unsigned level, std::uint64_t index) const { return offset_[level] + index; }
  bool is_leaf(NodeId v) const { return v >= offset_[h_]; }
  bool is_root(NodeId v) const { return v == 0; }

  NodeId parent(NodeId v) const {
    const auto l = level(v);
    return node(l - 1, index(v) / t_);
  }

  std::vector<NodeId> children(NodeId v) const {
    std::vector<NodeId> out;
    const auto l = level(v);
    if (l == h_) return out;
    const auto first = index(v) * t_;
    for (std::uint64_t j = 0; j < t_ && first + j < count_[l + 1]; ++j)
      out.push_back(node(l + 1, first + j));
    return out;
  }

  /// 1-based leaf number for key k: (i-1)*tB + 1 <= k <= i*tB.
  std::uint64_t leaf_number(Key k) const {
    if (k < 1 || k > n_) throw DomainError("key " + std::to_string(k) + " outside {1..N}");
    return (k - 1) / tb_ + 1;
  }
  NodeId leaf_node(Key k) const { return node(h_, leaf_number(k) - 1); }

  /// Position (0..t-1) among v's children of the child on the path to Leaf(k).
  std::uint64_t child_slot(NodeId v, Key k) const {
    const auto l = level(v);
    const auto leaf = leaf_number(k) - 1;
    return (leaf / span_[l + 1]) % t_;
  }
  NodeId child_toward(NodeId v, Key k) const {
    const auto l = level(v);
    return node(l + 1, (leaf_number(k) - 1) / span_[l + 1]);
  }

  /// Nodes from Leaf(k) up to the root.
  std::vector<NodeId> path_up(Key k) const {
    std::vector<NodeId> out;
    NodeId v = leaf_node(k);
    out.push_back(v);
    while (!is_root(v)) {
      v = parent(v);
      out.push_back(v);
    }
    return out;
  }

 private:
  std::uint64_t t_ = 2;
  unsigned h_ = 0;
  std::uint64_t tb_ = 1;
  std::uint64_t n_ = 1;
  std::vector<std::uint64_t> span_, offset_, count_;
};

/// Uncounted, decoded view of one node; used by oracles and tests.
struct NodeView {
  NodeId id = 0;
  bool leaf = false;
  bool root = false;
  Rank boundary = Rank::infinite();
  bool active = false;
  std::vector<Entry> list;
  std::vector<Signal> signals;
  std::vector<Signal> todo;
  std::optional<filter::Filter> filter;
};

struct TreeSnapshot {
  TreeConfig config;
  Topology topology;
  std::vector<NodeView> nodes;
};

enum class Proc : unsigned { PushSignal = 0, ApplyTodo, EmptyList, FillUp };
inline constexpr std::array<const char*, 4> kProcNames = {"push_signal", "apply_todo",
                                                          "empty_list", "fill_up"};

/// Block transfers charged to invocations of one procedure, excluding the
/// transfers of the procedures it calls.
struct ProcRecord {
  std::uint64_t calls = 0;
  std::uint64_t own_transfers = 0;
  std::uint64_t max_own = 0;
};

/// Test-side bookkeeping hooks. The queue never consults the observer's state.
class TreeObserver {
 public:
  virtual ~TreeObserver() = default;
  /// An Update(k,p) with p above Boundary(c) is about to enter c's todo buffer
  /// because c's filter answered "present".
  virtual void on_filter_routed_update(Key, NodeId) {}
  /// A Delete(k), or an Update(k,p) with p at most Boundary(c), was pushed into c.
  virtual void on_pushed_to(Key, NodeId) {}
  /// c's todo buffer has just been applied.
  virtual void on_todo_applied(NodeId) {}
};

class Tree {
 public:
  static constexpr std::uint64_t kHeaderWords = 6;
  static constexpr std::uint64_t kFilterSpillReserve = 8;

  Tree(TreeConfig cfg, emx::BlockStore& store) : cfg_(cfg), topo_(cfg), store_(store) {
    cfg_.validate();
    if (store_.block_words() != cfg_.b()) throw std::invalid_argument("tree: store B mismatch");
    const auto b = cfg_.b();
    const auto blocks_for = [b](std::uint64_t words) { return (words + b - 1) / b; };
    summary_blocks_ = blocks_for(kHeaderWords + 2 * (cfg_.todo_limit() + 1));
    filter_blocks_ = blocks_for(
        filter::Filter::max_serialized_words(cfg_.filter_params(0), kFilterSpillReserve));
    list_blocks_ = blocks_for(2 * cfg_.list_capacity());
    signal_blocks_ = blocks_for(2 * (cfg_.signal_limit() + 1));

    layout_.resize(topo_.node_count());
    slots_.resize(topo_.node_count());
    for (NodeId v = 1; v < topo_.node_count(); ++v) {
      auto& lay = layout_[v];
      auto alloc = [&](std::vector<emx::BlockId>& into, std::uint64_t n) {
        for (std::uint64_t i = 0; i < n; ++i) into.push_back(store_.alloc_block());
      };
      alloc(lay.summary, summary_blocks_);
      alloc(lay.list, list_blocks_);
      if (!topo_.is_leaf(v)) {
        alloc(lay.filter, filter_blocks_);
        alloc(lay.signals, signal_blocks_);
      }
    }
    root_pin_ = store_.pin(2 * (cfg_.list_limit() + 1) + 2 * (cfg_.signal_limit() + 1));
    root_.summary.data.boundary = Rank::infinite();
  }

  Tree(const Tree&) = delete;
  Tree& operator=(const Tree&) = delete;

  const TreeConfig& config() const { return cfg_; }
  const Topology& topology() const { return topo_; }
  emx::BlockStore& store() { return store_; }

  std::uint64_t leaf_of(Key k) const { return topo_.leaf_number(k); }

  // ---- public operations ----

  /// Inserts (k,p), or lowers k's priority to p when p is smaller.
  void update(Key k, Priority p) {
    check_key(k);
    if (p == kInfinity) throw DomainError("priority +inf is reserved");
    auto& list = root_.list.data;
    auto& hdr = root_.summary.data;
    if (topo_.height() == 0) {
      upsert_min(list, k, p);
      hdr.active = true;
      return;
    }
    if (auto it = find_key(list, k); it != list.end()) {
      if (p < it->priority) {
        it->priority = p;
        sort_desc(list);
      }
      return;
    }
    hdr.active = true;
    if (rank_of(k, p) > hdr.boundary) {
      push_root_signal(Signal::update(k, p));
      return;
    }
    insert_sorted(list, {k, p});
    push_root_signal(Signal::del(k));
    if (list.size() > cfg_.list_limit()) empty_list(Topology::root());
  }
  void insert(Key k, Priority p) { update(k, p); }
  void decrease_key(Key k, Priority p) { update(k, p); }

  void erase(Key k) {
    check_key(k);
    auto& list = root_.list.data;
    if (auto it = find_key(list, k); it != list.end()) {
      list.erase(it);
      if (list.empty()) fill_up(Topology::root());
      return;
    }
    if (topo_.height() == 0) return;
    root_.summary.data.active = true;
    push_root_signal(Signal::del(k));
  }

  std::optional<Entry> extract_min() {
    auto& list = root_.list.data;
    if (list.empty()) {
      if (topo_.height() == 0 || !root_.summary.data.active) return std::nullopt;
      fill_up(Topology::root());
      if (list.empty()) return std::nullopt;
    }
    const Entry e = list.back();
    erase(e.key);
    return e;
  }

  // ---- procedures (public for instrumentation and scenario tests) ----

  void push_signal(NodeId v) {
    ProcMeter meter(*this, Proc::PushSignal);
    if (topo_.is_leaf(v)) return;
    auto vs = hold_summary(v);
    SignalBatch batch = take_signals(v);
    const auto kids = topo_.children(v);
    std::vector<ChildCtx> ctx(kids.size());
    for (std::size_t j = 0; j < kids.size(); ++j) ctx[j].id = kids[j];

    for (const Signal& s : batch.signals) {
      auto& cx = ctx[topo_.child_slot(v, s.key)];
      ensure_child(cx, /*need_filter=*/false);
      const NodeId c = cx.id;
      auto& cs = cx.summary->get();
      cs.active = true;
      cx.summary->mark_dirty();
      if (topo_.is_leaf(c)) {
        if (s.is_delete())
          todo_put_delete(cs.todo, s.key);
        else
          todo_merge_update(cs.todo, s.key, s.priority);
      } else if (s.is_delete()) {
        if (check_in_actual(cx, s.key)) todo_put_delete(cs.todo, s.key);
        if (!cfg_.drop_delete_forwarding) append_signal(cx, s);
        if (observer_) observer_->on_pushed_to(s.key, c);
      } else if (rank_of(s.key, s.priority) <= cs.boundary) {
        todo_merge_update(cs.todo, s.key, s.priority);
        append_signal(cx, Signal::del(s.key));
        if (observer_) observer_->on_pushed_to(s.key, c);
      } else {
        const bool had_update = todo_has_update(cs.todo, s.key);
        if (had_update || filter_probe(cx, s.key)) {
          if (!had_update && observer_) observer_->on_filter_routed_update(s.key, c);
          todo_merge_update(cs.todo, s.key, s.priority);
        } else {
          append_signal(cx, s);
        }
      }
      if (!topo_.is_leaf(c) && cs.signal_count > cfg_.signal_limit()) {
        cx.signals_out.reset();
        push_signal(c);
      }
      if (cs.todo.size() > cfg_.todo_limit()) {
        cx.signals_out.reset();
        apply_todo(c);
      }
    }
  }

  /// check_in_actual for a node whose summary and filter are loaded by the
  /// caller: true when the filter reports k or the todo buffer holds an
  /// Update for k. False means k has no actual entry in c.
  bool check_in_actual(Key k, NodeId c) {
    auto s = hold_summary(c);
    if (todo_has_update(s->todo, k)) return true;
    if (topo_.is_leaf(c)) return false;
    auto f = hold_filter(c);
    return probe(*f, k);
  }

  void apply_todo(NodeId v, bool follow_up = true) {
    ProcMeter meter(*this, Proc::ApplyTodo);
    if (topo_.is_root(v)) {
      auto& list = root_.list.data;
      if (!list.empty()) root_.summary.data.boundary = rank_of(list.front());
      return;
    }
    auto vs = hold_summary(v);
    if (vs->todo.empty()) return;
    const bool leaf = topo_.is_leaf(v);
    auto vl = hold_list(v);
    auto todo = std::move(vs->todo);
    vs->todo.clear();
    vs.mark_dirty();
    vl.mark_dirty();
    {
      std::optional<Appender> pushback;
      for (const Signal& s : todo) {
        auto& list = vl.get();
        auto it = find_key(list, s.key);
        if (s.is_delete()) {
          if (it != list.end()) list.erase(it);
        } else if (it != list.end()) {
          it->priority = std::min(it->priority, s.priority);
        } else if (leaf || rank_of(s.key, s.priority) <= vs->boundary) {
          list.push_back({s.key, s.priority});
        } else {
          // Filter false positive detected: the update belongs further down.
          if (!pushback) pushback.emplace(store_, layout_[v].signals, 2 * vs->signal_count);
          pushback->put(s);
          ++vs->signal_count;
          if (vs->signal_count > cfg_.signal_limit()) {
            pushback.reset();
            push_signal(v);
          }
        }
      }
    }
    sort_desc(vl.get());
    if (!leaf) {
      auto vf = hold_filter(v, /*fresh=*/true);
      vf.get() = rebuild_filter(v, vl.get());
      vf.mark_dirty();
      if (!vl->empty()) vs->boundary = rank_of(vl->front());
    }
    vs->active = true;
    if (observer_) observer_->on_todo_applied(v);
    if (!follow_up) return;
    if (vl->size() > cfg_.list_limit())
      empty_list(v);
    else if (vl->empty() && !leaf)
      fill_up(v);
  }

  void empty_list(NodeId v) {
    ProcMeter meter(*this, Proc::EmptyList);
    if (topo_.is_leaf(v)) return;
    apply_todo(v, /*follow_up=*/false);
    if (pending_signals(v) > 0) push_signal(v);
    auto vs = hold_summary(v);
    auto vl = hold_list(v);
    auto& list = vl.get();
    if (list.size() <= cfg_.tb()) return;
    const auto excess = list.size() - cfg_.tb();
    const auto kids = topo_.children(v);
    std::vector<ChildCtx> ctx(kids.size());
    for (std::size_t j = 0; j < kids.size(); ++j) ctx[j].id = kids[j];

    for (std::uint64_t i = 0; i < excess; ++i) {
      const Entry e = list[i];
      auto& cx = ctx[topo_.child_slot(v, e.key)];
      ensure_child(cx, /*need_filter=*/false);
      auto& cs = cx.summary->get();
      cs.active = true;
      cx.summary->mark_dirty();
      if (auto d = std::find_if(cs.todo.begin(), cs.todo.end(),
                                [&](const Signal& s) { return s.key == e.key; });
          d != cs.todo.end() && d->is_delete()) {
        *d = Signal::update(e.key, e.priority);
        continue;
      }
      if (!cx.list_out) cx.list_out.emplace(store_, layout_[cx.id].list, 2 * cs.list_len);
      cx.list_out->put(e);
      ++cs.list_len;
      if (!topo_.is_leaf(cx.id)) {
        ensure_child(cx, /*need_filter=*/true);
        (*cx.filter)->insert(e.key);
        cx.filter->mark_dirty();
      }
      if (cs.list_len > cfg_.list_limit()) {
        cx.list_out.reset();
        empty_list(cx.id);
      }
    }
    ctx.clear();
    list.erase(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(excess));
    vl.mark_dirty();
    vs->boundary = rank_of(list.front());
    vs.mark_dirty();
    if (!topo_.is_root(v)) {
      auto vf = hold_filter(v, /*fresh=*/true);
      vf.get() = rebuild_filter(v, list);
      vf.mark_dirty();
    }
  }

  void fill_up(NodeId v) {
    ProcMeter meter(*this, Proc::FillUp);
    if (topo_.is_leaf(v)) return;
    apply_todo(v, /*follow_up=*/false);
    if (pending_signals(v) > 0) push_signal(v);
    auto vs = hold_summary(v);
    auto vl = hold_list(v);
    const auto kids = topo_.children(v);
    std::vector<ChildCtx> ctx(kids.size());
    for (std::size_t j = 0; j < kids.size(); ++j) {
      ctx[j].id = kids[j];
      ensure_child(ctx[j], /*need_filter=*/false);
      const auto& cs = ctx[j].summary->get();
      if (cs.list_len == 0 && cs.active && !topo_.is_leaf(kids[j])) fill_up(kids[j]);
    }

    while (vl->size() < cfg_.tb()) {
      std::optional<Rank> best;
      std::size_t best_child = 0;
      bool from_todo = false;
      for (std::size_t j = 0; j < ctx.size(); ++j) {
        auto& cx = ctx[j];
        auto& cs = cx.summary->get();
        if (cs.list_len > 0) {
          if (cx.tail.empty()) load_tail(cx);
          const Rank r = rank_of(cx.tail.back());
          if (!best || r < *best) {
            best = r;
            best_child = j;
            from_todo = false;
          }
        }
        for (const Signal& s : cs.todo) {
          if (!s.is_update()) continue;
          const Rank r = rank_of(s.key, s.priority);
          if (r > cs.boundary) continue;
          if (!best || r < *best) {
            best = r;
            best_child = j;
            from_todo = true;
          }
        }
      }
      if (!best) break;

      auto& cx = ctx[best_child];
      auto& cs = cx.summary->get();
      cx.summary->mark_dirty();
      const Entry e{best->key, best->priority};
      if (from_todo) {
        todo_put_delete(cs.todo, e.key);
        vl->push_back(e);
      } else {
        cx.tail.pop_back();
        --cs.list_len;
        if (!topo_.is_leaf(cx.id)) {
          ensure_child(cx, /*need_filter=*/true);
          (*cx.filter)->erase(e.key);
          cx.filter->mark_dirty();
        }
        auto d = std::find_if(cs.todo.begin(), cs.todo.end(),
                              [&](const Signal& s) { return s.key == e.key && s.is_delete(); });
        if (d == cs.todo.end()) {
          std::erase_if(cs.todo, [&](const Signal& s) { return s.key == e.key; });
          vl->push_back(e);
        }
        if (cs.list_len == 0) {
          cx.tail.clear();
          cx.tail_pin = {};
          if (!topo_.is_leaf(cx.id)) fill_up(cx.id);
        }
      }
    }
    ctx.clear();

    auto& list = vl.get();
    sort_desc(list);
    vl.mark_dirty();
    vs.mark_dirty();
    if (!list.empty()) {
      vs->boundary = rank_of(list.front());
      vs->active = true;
    } else {
      vs->boundary = Rank::infinite();
      vs->active = false;
    }
    if (!topo_.is_root(v)) {
      auto vf = hold_filter(v, /*fresh=*/true);
      vf.get() = rebuild_filter(v, list);
      vf.mark_dirty();
    }
  }

  // ---- instrumentation ----

  const ProcRecord& proc_record(Proc p) const { return records_[static_cast<unsigned>(p)]; }
  void reset_proc_records() { records_ = {}; }
  /// Called with (procedure, own transfers) after every procedure invocation.
  void set_proc_listener(std::function<void(Proc, std::uint64_t)> fn) {
    proc_listener_ = std::move(fn);
  }
  void set_observer(TreeObserver* obs) { observer_ = obs; }
  std::uint64_t filter_probes() const { return probes_; }

  /// Serialized words of node v: header, todo, list, signal buffer, filter.
  std::uint64_t size_words(NodeId v) const { return size_words(inspect(v)); }
  static std::uint64_t size_words(const NodeView& n) {
    return kHeaderWords + 2 * (n.todo.size() + n.list.size() + n.signals.size()) +
           (n.filter ? n.filter->serialized_words() : 0);
  }

  // ---- uncounted inspection ----

  NodeView inspect(NodeId v) const {
    NodeView out;
    out.id = v;
    out.leaf = topo_.is_leaf(v);
    out.root = topo_.is_root(v);
    if (out.root) {
      const auto& h = root_.summary.data;
      out.boundary = h.boundary;
      out.active = h.active;
      out.list = root_.list.data;
      out.signals = root_.signals.data;
      return out;
    }
    const auto& slot = slots_[v];
    const Summary hdr = slot.summary ? slot.summary->data : peek_summary(v);
    out.boundary = topo_.is_leaf(v) ? Rank::infinite() : hdr.boundary;
    out.active = hdr.active;
    out.todo = hdr.todo;
    out.list = slot.list ? slot.list->data : peek_records<Entry>(layout_[v].list, hdr.list_len);
    if (!out.leaf) {
      out.signals = peek_records<Signal>(layout_[v].signals, hdr.signal_count);
      out.filter = slot.filter ? slot.filter->data : peek_filter(v);
    }
    return out;
  }

  bool inspect_list_contains(NodeId v, Key k) const {
    const auto n = inspect(v);
    return std::any_of(n.list.begin(), n.list.end(), [&](const Entry& e) { return e.key == k; });
  }

  TreeSnapshot snapshot() const {
    TreeSnapshot s{cfg_, topo_, {}};
    s.nodes.reserve(topo_.node_count());
    for (NodeId v = 0; v < topo_.node_count(); ++v) s.nodes.push_back(inspect(v));
    return s;
  }

  /// Overwrites node v with the given contents through ordinary counted
  /// writes. For building scenarios in tests.
  void load_node(NodeId v, const NodeView& n) {
    if (topo_.is_root(v)) {
      root_.summary.data.boundary = n.boundary;
      root_.summary.data.active = n.active;
      root_.list.data = n.list;
      root_.signals.data = n.signals;
      return;
    }
    {
      auto s = hold_summary(v);
      s->boundary = n.boundary;
      s->active = n.active;
      s->todo = n.todo;
      s->list_len = 0;
      s->signal_count = 0;
      s.mark_dirty();
    }
    auto s = hold_summary(v);
    s->list_len = n.list.size();
    s->signal_count = n.signals.size();
    {
      auto l = hold_list(v);
      l.get() = n.list;
      l.mark_dirty();
    }
    if (!topo_.is_leaf(v)) {
      {
        auto sig = hold_signals(v);
        sig.get() = n.signals;
        sig.mark_dirty();
      }
      auto f = hold_filter(v, /*fresh=*/true);
      f.get() = n.filter ? *n.filter : rebuild_filter(v, n.list);
      f.mark_dirty();
    }
  }

 private:
  // ---- node component cache ----

  struct Summary {
    Rank boundary = Rank::infinite();
    std::uint64_t list_len = 0;
    std::uint64_t signal_count = 0;
    bool active = false;
    std::vector<Signal> todo;
  };

  template <class T>
  struct Cached {
    T data{};
    int refs = 0;
    bool dirty = false;
    emx::PinToken pin;
  };

  struct Slot {
    std::unique_ptr<Cached<Summary>> summary;
    std::unique_ptr<Cached<filter::Filter>> filter;
    std::unique_ptr<Cached<std::vector<Entry>>> list;
    std::unique_ptr<Cached<std::vector<Signal>>> signals;
  };

  struct Layout {
    std::vector<emx::BlockId> summary, filter, list, signals;
  };

  struct RootState {
    Cached<Summary> summary;
    Cached<std::vector<Entry>> list;
    Cached<std::vector<Signal>> signals;
  };

  enum class Part { Summary, Filter, List, Signals };

  template <class T>
  class Held {
   public:
    Held() = default;
    Held(Tree* tree, NodeId id, Part part, Cached<T>* c) : tree_(tree), id_(id), part_(part), c_(c) {}
    Held(const Held&) = delete;
    Held& operator=(const Held&) = delete;
    Held(Held&& o) noexcept
        : tree_(std::exchange(o.tree_, nullptr)), id_(o.id_), part_(o.part_), c_(std::exchange(o.c_, nullptr)) {}
    Held& operator=(Held&& o) noexcept {
      if (this != &o) {
        reset();
        tree_ = std::exchange(o.tree_, nullptr);
        id_ = o.id_;
        part_ = o.part_;
        c_ = std::exchange(o.c_, nullptr);
      }
      return *this;
    }
    ~Held() { reset(); }

    T& get() { return c_->data; }
    T* operator->() { return &c_->data; }
    T& operator*() { return c_->data; }
    void mark_dirty() { c_->dirty = true; }

    void reset() {
      if (tree_ != nullptr) tree_->release(id_, part_);
      tree_ = nullptr;
      c_ = nullptr;
    }

   private:
    Tree* tree_ = nullptr;
    NodeId id_ = 0;
    Part part_ = Part::Summary;
    Cached<T>* c_ = nullptr;
  };

  // Root components are permanently resident; holds on them are no-ops.
  Held<Summary> hold_summary(NodeId v) {
    if (topo_.is_root(v)) return Held<Summary>(nullptr, v, Part::Summary, &root_.summary);
    auto& c = slots_[v].summary;
    if (!c) {
      c = std::make_unique<Cached<Summary>>();
      c->pin = store_.pin(summary_blocks_ * cfg_.b());
      c->data = read_summary(v);
    }
    ++c->refs;
    return Held<Summary>(this, v, Part::Summary, c.get());
  }

  Held<filter::Filter> hold_filter(NodeId v, bool fresh = false) {
    auto& c = slots_[v].filter;
    if (!c) {
      c = std::make_unique<Cached<filter::Filter>>();
      c->pin = store_.pin(filter_blocks_ * cfg_.b());
      c->data = fresh ? filter::Filter(cfg_.filter_params(v)) : read_filter(v);
    }
    ++c->refs;
    return Held<filter::Filter>(this, v, Part::Filter, c.get());
  }

  Held<std::vector<Entry>> hold_list(NodeId v) {
    if (topo_.is_root(v)) return Held<std::vector<Entry>>(nullptr, v, Part::List, &root_.list);
    auto& c = slots_[v].list;
    if (!c) {
      auto s = hold_summary(v);
      c = std::make_unique<Cached<std::vector<Entry>>>();
      c->pin = store_.pin(list_blocks_ * cfg_.b());
      c->data = read_records<Entry>(layout_[v].list, s->list_len);
    }
    ++c->refs;
    return Held<std::vector<Entry>>(this, v, Part::List, c.get());
  }

  Held<std::vector<Signal>> hold_signals(NodeId v) {
    if (topo_.is_root(v))
      return Held<std::vector<Signal>>(nullptr, v, Part::Signals, &root_.signals);
    auto& c = slots_[v].signals;
    if (!c) {
      auto s = hold_summary(v);
      c = std::make_unique<Cached<std::vector<Signal>>>();
      c->pin = store_.pin(signal_blocks_ * cfg_.b());
      c->data = read_records<Signal>(layout_[v].signals, s->signal_count);
    }
    ++c->refs;
    return Held<std::vector<Signal>>(this, v, Part::Signals, c.get());
  }

  void release(NodeId v, Part part) {
    auto& slot = slots_[v];
    switch (part) {
      case Part::Summary:
        if (--slot.summary->refs == 0) {
          if (slot.summary->dirty) write_summary(v, slot.summary->data);
          slot.summary.reset();
        }
        break;
      case Part::Filter:
        if (--slot.filter->refs == 0) {
          if (slot.filter->dirty) write_filter(v, slot.filter->data);
          slot.filter.reset();
        }
        break;
      case Part::List:
        if (--slot.list->refs == 0) {
          if (slot.list->dirty) write_records(layout_[v].list, slot.list->data);
          // The on-disk length lives in the summary.
          if (slot.list->dirty) {
            auto s = hold_summary(v);
            if (s->list_len != slot.list->data.size()) {
              s->list_len = slot.list->data.size();
              s.mark_dirty();
            }
          }
          slot.list.reset();
        }
        break;
      case Part::Signals:
        if (--slot.signals->refs == 0) {
          if (slot.signals->dirty) {
            write_records(layout_[v].signals, slot.signals->data);
            auto s = hold_summary(v);
            s->signal_count = slot.signals->data.size();
            s.mark_dirty();
          }
          slot.signals.reset();
        }
        break;
    }
  }

  std::uint64_t pending_signals(NodeId v) {
    if (topo_.is_root(v)) return root_.signals.data.size();
    if (topo_.is_leaf(v)) return 0;
    return hold_summary(v)->signal_count;
  }

  // ---- block-level transfers ----

  std::uint64_t blocks_for(std::uint64_t words) const { return xpq::blocks_for(words, cfg_.b()); }

  void read_words(const Region& region, std::uint64_t first_block, std::uint64_t nblocks,
                  std::vector<Word>& out) {
    read_region(store_, region, first_block, nblocks, out);
  }
  void write_words(const Region& region, std::span<const Word> words) {
    write_region(store_, region, words);
  }

  // Summary region: header words then todo records.
  //   [~boundary.priority, ~boundary.key, list_len, signal_count, todo_len, active]
  // Complemented boundary words make a zero-filled block decode as +inf.
  static Summary decode_summary_header(std::span<const Word> w) {
    Summary s;
    s.boundary = {~w[0], ~w[1]};
    s.list_len = w[2];
    s.signal_count = w[3];
    s.active = w[5] != 0;
    s.todo.resize(w[4]);
    return s;
  }

  Summary read_summary(NodeId v) {
    const auto& region = layout_[v].summary;
    std::vector<Word> words;
    const auto head_blocks = blocks_for(kHeaderWords);
    read_words(region, 0, head_blocks, words);
    Summary s = decode_summary_header(words);
    const auto total = blocks_for(kHeaderWords + 2 * s.todo.size());
    if (total > head_blocks) {
      std::vector<Word> rest;
      read_words(region, head_blocks, total - head_blocks, rest);
      words.insert(words.end(), rest.begin(), rest.end());
    }
    for (std::size_t i = 0; i < s.todo.size(); ++i)
      s.todo[i] = decode_signal(words.data() + kHeaderWords + 2 * i);
    return s;
  }

  void write_summary(NodeId v, const Summary& s) {
    std::vector<Word> words(kHeaderWords + 2 * s.todo.size());
    words[0] = ~s.boundary.priority;
    words[1] = ~s.boundary.key;
    words[2] = s.list_len;
    words[3] = s.signal_count;
    words[4] = s.todo.size();
    words[5] = s.active ? 1 : 0;
    for (std::size_t i = 0; i < s.todo.size(); ++i)
      encode(s.todo[i], words.data() + kHeaderWords + 2 * i);
    write_words(layout_[v].summary, words);
  }

  filter::Filter read_filter(NodeId v) {
    const auto& region = layout_[v].filter;
    const auto params = cfg_.filter_params(v);
    const auto fixed = filter::Filter::max_serialized_words(params, 0);
    std::vector<Word> words;
    read_words(region, 0, blocks_for(fixed), words);
    if (words[0] == 0) return filter::Filter(params);
    const auto spill = words[5];
    const auto total = blocks_for(fixed + spill);
    if (total > blocks_for(fixed)) {
      std::vector<Word> rest;
      read_words(region, blocks_for(fixed), total - blocks_for(fixed), rest);
      words.insert(words.end(), rest.begin(), rest.end());
    }
    return filter::Filter::deserialize(words);
  }

  void write_filter(NodeId v, const filter::Filter& f) {
    const auto words = f.serialize();
    if (blocks_for(words.size()) > layout_[v].filter.size())
      throw filter::OverflowError("tree: filter spill exceeds node region");
    write_words(layout_[v].filter, words);
  }

  template <class Rec>
  std::vector<Rec> read_records(const Region& region, std::uint64_t n) {
    return xpq::read_records<Rec>(store_, region, n);
  }
  template <class Rec>
  void write_records(const Region& region, const std::vector<Rec>& recs) {
    xpq::write_records(store_, region, recs);
  }

  // Uncounted decoders for inspection.
  std::vector<Word> peek_words(const std::vector<emx::BlockId>& region, std::uint64_t words) const {
    std::vector<Word> out;
    for (std::uint64_t i = 0; i < blocks_for(words); ++i) {
      auto blk = store_.peek_block(region.at(i));
      out.insert(out.end(), blk.begin(), blk.end());
    }
    return out;
  }

  Summary peek_summary(NodeId v) const {
    auto head = peek_words(layout_[v].summary, kHeaderWords);
    Summary s = decode_summary_header(head);
    auto words = peek_words(layout_[v].summary, kHeaderWords + 2 * s.todo.size());
    for (std::size_t i = 0; i < s.todo.size(); ++i)
      s.todo[i] = decode_signal(words.data() + kHeaderWords + 2 * i);
    return s;
  }

  template <class Rec>
  std::vector<Rec> peek_records(const std::vector<emx::BlockId>& region, std::uint64_t n) const {
    auto words = peek_words(region, 2 * n);
    std::vector<Rec> out(n);
    for (std::uint64_t i = 0; i < n; ++i) out[i] = decode_record<Rec>(words.data() + 2 * i);
    return out;
  }

  filter::Filter peek_filter(NodeId v) const {
    const auto& region = layout_[v].filter;
    auto words = peek_words(region, region.size() * cfg_.b());
    if (words[0] == 0) return filter::Filter(cfg_.filter_params(v));
    return filter::Filter::deserialize(words);
  }

  using Appender = RecordAppender;

  struct ChildCtx {
    NodeId id = 0;
    std::optional<Held<Summary>> summary;
    std::optional<Held<filter::Filter>> filter;
    std::optional<Appender> signals_out;
    std::optional<Appender> list_out;
    std::vector<Entry> tail;  // last entries of the child's list; back() is smallest
    emx::PinToken tail_pin;

    ChildCtx() = default;
    ChildCtx(ChildCtx&&) = default;
    ChildCtx& operator=(ChildCtx&&) = default;
    ~ChildCtx() {
      // Appenders flush before the summary hold writes the header back.
      signals_out.reset();
      list_out.reset();
      filter.reset();
      summary.reset();
    }
  };

  void ensure_child(ChildCtx& cx, bool need_filter) {
    if (!cx.summary) cx.summary.emplace(hold_summary(cx.id));
    if (need_filter && !cx.filter && !topo_.is_leaf(cx.id)) cx.filter.emplace(hold_filter(cx.id));
  }

  void append_signal(ChildCtx& cx, const Signal& s) {
    auto& cs = cx.summary->get();
    if (!cx.signals_out) cx.signals_out.emplace(store_, layout_[cx.id].signals, 2 * cs.signal_count);
    cx.signals_out->put(s);
    ++cs.signal_count;
  }

  /// Loads up to B entries from the smallest end of a child's list.
  void load_tail(ChildCtx& cx) {
    const auto len = cx.summary->get().list_len;
    const auto n = std::min<std::uint64_t>(cfg_.b(), len);
    const auto first_word = 2 * (len - n);
    const auto first_block = first_word / cfg_.b();
    const auto last_block = blocks_for(2 * len);
    if (!cx.tail_pin.active()) cx.tail_pin = store_.pin(3 * cfg_.b());
    std::vector<Word> words;
    read_words(layout_[cx.id].list, first_block, last_block - first_block, words);
    cx.tail.clear();
    const auto offset = first_word - first_block * cfg_.b();
    for (std::uint64_t i = 0; i < n; ++i) cx.tail.push_back(decode_entry(words.data() + offset + 2 * i));
  }

  struct SignalBatch {
    std::vector<Signal> signals;
    emx::PinToken pin;
  };

  SignalBatch take_signals(NodeId v) {
    SignalBatch out;
    if (topo_.is_root(v)) {
      out.signals = std::move(root_.signals.data);
      root_.signals.data.clear();
      return out;
    }
    auto& cache = slots_[v].signals;
    auto s = hold_summary(v);
    if (cache) {
      out.signals = std::move(cache->data);
      cache->data.clear();
      cache->dirty = true;
    } else {
      out.pin = store_.pin(signal_blocks_ * cfg_.b());
      out.signals = read_records<Signal>(layout_[v].signals, s->signal_count);
    }
    s->signal_count = 0;
    s.mark_dirty();
    return out;
  }

  void push_root_signal(const Signal& s) {
    root_.signals.data.push_back(s);
    if (root_.signals.data.size() > cfg_.signal_limit()) push_signal(Topology::root());
  }

  bool check_in_actual(ChildCtx& cx, Key k) {
    if (todo_has_update(cx.summary->get().todo, k)) return true;
    return filter_probe(cx, k);
  }

  bool filter_probe(ChildCtx& cx, Key k) {
    ensure_child(cx, /*need_filter=*/true);
    return probe(cx.filter->get(), k);
  }

  bool probe(const filter::Filter& f, Key k) {
    ++probes_;
    if (cfg_.inject_fp_every != 0 && probes_ % cfg_.inject_fp_every == 0) return true;
    return f.contains(k);
  }

  filter::Filter rebuild_filter(NodeId v, const std::vector<Entry>& list) const {
    std::vector<Key> keys;
    keys.reserve(list.size());
    for (const auto& e : list) keys.push_back(e.key);
    return filter::Filter::rebuild(cfg_.filter_params(v), keys);
  }

  // ---- list and buffer helpers ----

  static std::vector<Entry>::iterator find_key(std::vector<Entry>& list, Key k) {
    return std::find_if(list.begin(), list.end(), [&](const Entry& e) { return e.key == k; });
  }
  static void sort_desc(std::vector<Entry>& list) {
    std::sort(list.begin(), list.end(),
              [](const Entry& a, const Entry& b) { return rank_of(a) > rank_of(b); });
  }
  static void insert_sorted(std::vector<Entry>& list, Entry e) {
    auto pos = std::lower_bound(list.begin(), list.end(), e, [](const Entry& a, const Entry& b) {
      return rank_of(a) > rank_of(b);
    });
    list.insert(pos, e);
  }
  static void upsert_min(std::vector<Entry>& list, Key k, Priority p) {
    if (auto it = find_key(list, k); it != list.end()) {
      if (p < it->priority) {
        it->priority = p;
        sort_desc(list);
      }
      return;
    }
    insert_sorted(list, {k, p});
  }

  static bool todo_has_update(const std::vector<Signal>& todo, Key k) {
    return std::any_of(todo.begin(), todo.end(),
                       [&](const Signal& s) { return s.key == k && s.is_update(); });
  }
  /// Replaces every signal for k with a single trailing Delete(k).
  static void todo_put_delete(std::vector<Signal>& todo, Key k) {
    std::erase_if(todo, [&](const Signal& s) { return s.key == k; });
    todo.push_back(Signal::del(k));
  }
  static void todo_merge_update(std::vector<Signal>& todo, Key k, Priority p) {
    for (auto& s : todo) {
      if (s.key == k && s.is_update()) {
        s.priority = std::min(s.priority, p);
        return;
      }
    }
    todo.push_back(Signal::update(k, p));
  }

  void check_key(Key k) const {
    if (k < 1 || k > cfg_.model.n)
      throw DomainError("key " + std::to_string(k) + " outside {1.." +
                        std::to_string(cfg_.model.n) + "}");
  }

  // ---- per-procedure I/O metering ----

  struct MeterFrame {
    std::uint64_t start = 0;
    std::uint64_t nested = 0;
  };

  class ProcMeter {
   public:
    ProcMeter(Tree& t, Proc p) : tree_(t), proc_(p) {
      tree_.meter_stack_.push_back({tree_.store_.snapshot_stats().transfers(), 0});
    }
    ProcMeter(const ProcMeter&) = delete;
    ProcMeter& operator=(const ProcMeter&) = delete;
    ~ProcMeter() {
      const auto frame = tree_.meter_stack_.back();
      tree_.meter_stack_.pop_back();
      const auto total = tree_.store_.snapshot_stats().transfers() - frame.start;
      const auto own = total - frame.nested;
      if (!tree_.meter_stack_.empty()) tree_.meter_stack_.back().nested += total;
      auto& rec = tree_.records_[static_cast<unsigned>(proc_)];
      ++rec.calls;
      rec.own_transfers += own;
      rec.max_own = std::max(rec.max_own, own);
      if (tree_.proc_listener_) tree_.proc_listener_(proc_, own);
    }

   private:
    Tree& tree_;
    Proc proc_;
  };

  TreeConfig cfg_;
  Topology topo_;
  emx::BlockStore& store_;
  std::uint64_t summary_blocks_ = 0, filter_blocks_ = 0, list_blocks_ = 0, signal_blocks_ = 0;
  std::vector<Layout> layout_;
  std::vector<Slot> slots_;
  RootState root_;
  emx::PinToken root_pin_;
  std::vector<MeterFrame> meter_stack_;
  std::array<ProcRecord, 4> records_{};
  std::function<void(Proc, std::uint64_t)> proc_listener_;
  TreeObserver* observer_ = nullptr;
  std::uint64_t probes_ = 0;
};

}  // namespace xpq
