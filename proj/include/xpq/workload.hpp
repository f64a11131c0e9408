#pragma once

// Workload generation, differential replay against the reference queue, and
// I/O cost measurement for the queue and the binary baseline.

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "xpq/emx.hpp"
#include "xpq/ktree.hpp"
#include "xpq/oracle.hpp"
#include "xpq/pq.hpp"
#include "xpq/sssp.hpp"
#include "xpq/trace.hpp"

namespace xpq::workload {

enum class Kind { RandomMixed, InsertHeavy, DecreaseHeavy, SortedDrain, SsspDerived };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::RandomMixed: return "random-mixed";
    case Kind::InsertHeavy: return "insert-heavy";
    case Kind::DecreaseHeavy: return "decrease-heavy";
    case Kind::SortedDrain: return "sorted-drain";
    case Kind::SsspDerived: return "sssp-derived";
  }
  return "?";
}

inline Kind parse_kind(const std::string& s) {
  for (auto k : {Kind::RandomMixed, Kind::InsertHeavy, Kind::DecreaseHeavy, Kind::SortedDrain,
                 Kind::SsspDerived})
    if (s == kind_name(k)) return k;
  throw std::invalid_argument("unknown workload kind '" + s + "'");
}

struct Workload {
  Kind kind = Kind::RandomMixed;
  std::uint64_t ops = 1000;
  std::uint64_t n = 256;
  std::uint64_t seed = 1;
  Priority max_priority = 1'000'000;
};

namespace detail {

// Live keys with uniform sampling and an ordered view for extract-min.
class Shadow {
 public:
  bool contains(Key k) const { return prio_.count(k) != 0; }
  Priority at(Key k) const { return prio_.at(k); }
  bool empty() const { return prio_.empty(); }
  Key sample(std::mt19937_64& rng) const { return keys_[rng() % keys_.size()]; }
  void update(Key k, Priority p) {
    auto it = prio_.find(k);
    if (it == prio_.end()) {
      pos_[k] = keys_.size();
      keys_.push_back(k);
      prio_[k] = p;
      order_.insert(rank_of(k, p));
    } else if (p < it->second) {
      order_.erase(rank_of(k, it->second));
      it->second = p;
      order_.insert(rank_of(k, p));
    }
  }
  void erase(Key k) {
    auto it = prio_.find(k);
    if (it == prio_.end()) return;
    order_.erase(rank_of(k, it->second));
    prio_.erase(it);
    const auto i = pos_[k];
    keys_[i] = keys_.back();
    pos_[keys_[i]] = i;
    keys_.pop_back();
    pos_.erase(k);
  }
  std::optional<Rank> min() const {
    if (order_.empty()) return std::nullopt;
    return *order_.begin();
  }
  void extract_min() {
    if (!order_.empty()) erase(order_.begin()->key);
  }

 private:
  std::unordered_map<Key, Priority> prio_;
  std::unordered_map<Key, std::size_t> pos_;
  std::vector<Key> keys_;
  std::set<Rank> order_;
};

inline Trace mixed(const Workload& s, unsigned update_pct, unsigned delete_pct) {
  std::mt19937_64 rng(s.seed);
  Trace t;
  t.reserve(s.ops);
  for (std::uint64_t i = 0; i < s.ops; ++i) {
    const auto r = rng() % 100;
    const Key k = rng() % s.n + 1;
    const Priority p = rng() % s.max_priority;
    if (r < update_pct)
      t.push_back(Op::update(k, p));
    else if (r < update_pct + delete_pct)
      t.push_back(Op::del(k));
    else
      t.push_back(Op::extract());
  }
  return t;
}

inline Trace decrease_heavy(const Workload& s) {
  std::mt19937_64 rng(s.seed);
  Shadow live;
  Trace t;
  t.reserve(s.ops);
  const auto warmup = std::min(s.n / 2, s.ops / 4);
  while (t.size() < s.ops) {
    const auto r = rng() % 10;
    if (t.size() < warmup || live.empty() || r >= 8) {
      const Key k = rng() % s.n + 1;
      const Priority p = rng() % s.max_priority;
      t.push_back(Op::update(k, p));
      live.update(k, p);
    } else if (r < 6) {
      // Target a live key; half the time with a strictly smaller priority.
      const Key k = live.sample(rng);
      const Priority cur = live.at(k);
      Priority p;
      if (rng() % 2 == 0 && cur > 0)
        p = rng() % cur;
      else
        p = cur + rng() % s.max_priority;
      t.push_back(Op::update(k, p));
      live.update(k, p);
    } else {
      t.push_back(Op::extract());
      live.extract_min();
    }
  }
  return t;
}

inline Trace sorted_drain(const Workload& s) {
  std::mt19937_64 rng(s.seed);
  std::vector<Key> keys(s.n);
  for (std::uint64_t i = 0; i < s.n; ++i) keys[i] = i + 1;
  for (std::uint64_t i = s.n; i > 1; --i) std::swap(keys[i - 1], keys[rng() % i]);
  const auto inserts = std::min(s.n, s.ops / 2);
  Trace t;
  for (std::uint64_t i = 0; i < inserts; ++i) t.push_back(Op::update(keys[i], rng() % s.max_priority));
  while (t.size() < s.ops) t.push_back(Op::extract());
  return t;
}

// The queue operations of repeated Dijkstra runs on random graphs over
// vertices 1..n.
inline Trace sssp_derived(const Workload& s) {
  std::mt19937_64 rng(s.seed);
  Trace t;
  while (t.size() < s.ops) {
    const auto g = sssp::random_graph(s.n, 4 * s.n, 1000, rng());
    std::vector<std::vector<std::pair<sssp::Vertex, sssp::Weight>>> adj(s.n + 1);
    for (const auto& e : g.edges) adj[e.u].emplace_back(e.v, e.w);
    std::vector<bool> settled(s.n + 1, false);
    Shadow q;
    const Key source = rng() % s.n + 1;
    t.push_back(Op::update(source, 0));
    q.update(source, 0);
    while (!q.empty() && t.size() < s.ops) {
      const auto m = *q.min();
      t.push_back(Op::extract());
      q.extract_min();
      settled[m.key] = true;
      for (auto [v, w] : adj[m.key]) {
        if (settled[v] || t.size() >= s.ops) continue;
        t.push_back(Op::update(v, m.priority + w));
        q.update(v, m.priority + w);
      }
    }
    // Drain what a truncated run left behind so the next run starts empty.
    while (!q.empty() && t.size() < s.ops) {
      t.push_back(Op::extract());
      q.extract_min();
    }
  }
  return t;
}

}  // namespace detail

/// Deterministic trace: the same workload always yields the same operations.
inline Trace generate(const Workload& s) {
  if (s.n == 0) throw std::invalid_argument("workload: n must be positive");
  switch (s.kind) {
    case Kind::RandomMixed: return detail::mixed(s, 60, 20);
    case Kind::InsertHeavy: return detail::mixed(s, 80, 10);
    case Kind::DecreaseHeavy: return detail::decrease_heavy(s);
    case Kind::SortedDrain: return detail::sorted_drain(s);
    case Kind::SsspDerived: return detail::sssp_derived(s);
  }
  return {};
}

enum class Backend { Xpq, KTree };

inline const char* backend_name(Backend b) { return b == Backend::Xpq ? "xpq" : "ktree"; }
inline Backend parse_backend(const std::string& s) {
  if (s == "xpq") return Backend::Xpq;
  if (s == "ktree") return Backend::KTree;
  throw std::invalid_argument("unknown backend '" + s + "'");
}

struct Params {
  emx::ModelParams model{1 << 16, 64, 1 << 14, 64};
  std::uint64_t t = 4;
  double epsilon = 1.0 / 1024;
  std::uint64_t seed = 1;
  std::uint64_t inject_fp_every = 0;
  bool enforce_budget = true;
  bool drop_delete_forwarding = false;  // mutation testing only

  TreeConfig tree_config() const {
    auto c = TreeConfig::make(model, t, epsilon, seed);
    c.inject_fp_every = inject_fp_every;
    c.drop_delete_forwarding = drop_delete_forwarding;
    return c;
  }
  emx::StoreOptions store_options() const {
    emx::StoreOptions o;
    o.enforce_budget = enforce_budget;
    return o;
  }
};

template <class Q>
std::optional<Entry> apply(Q& q, const Op& op) {
  switch (op.kind) {
    case Op::Kind::Update: q.update(op.key, op.priority); return std::nullopt;
    case Op::Kind::Delete: q.erase(op.key); return std::nullopt;
    case Op::Kind::Extract: return q.extract_min();
  }
  return std::nullopt;
}

struct DiffOptions {
  bool check_invariants = false;
};

struct DiffResult {
  bool ok = true;
  std::uint64_t ops = 0;
  std::optional<std::uint64_t> diverged_at;
  std::string detail;
  oracle::Report report;  // first failing invariant report, if any
  std::uint64_t invariant_checks = 0;
  std::uint64_t mark_events = 0;
  std::array<ProcRecord, 4> procs{};
  emx::IoStats io;
  std::uint64_t peak_pinned = 0;
};

namespace detail {

inline std::string show(const std::optional<Entry>& e) {
  if (!e) return "Empty";
  std::ostringstream os;
  os << *e;
  return os.str();
}

template <class Q, class After>
void replay(Q& q, const Trace& trace, DiffResult& r, After after) {
  oracle::RefQueue ref;
  for (std::uint64_t i = 0; i < trace.size(); ++i) {
    const auto got = apply(q, trace[i]);
    const auto want = ref.apply(trace[i]);
    ++r.ops;
    if (got != want) {
      r.ok = false;
      r.diverged_at = i;
      std::ostringstream os;
      os << "op " << i << " (" << trace[i] << "): queue returned " << show(got) << ", reference "
         << show(want);
      r.detail = os.str();
      return;
    }
    if (!after(i, ref)) return;
  }
}

}  // namespace detail

/// Replays a trace on a backend and on the reference queue, stopping at the
/// first divergence or invariant violation.
inline DiffResult run_diff(const Trace& trace, const Params& p, Backend backend = Backend::Xpq,
                           DiffOptions opts = {}) {
  DiffResult r;
  emx::BlockStore store(p.model, p.store_options());
  if (backend == Backend::KTree) {
    KTree q(p.model, store);
    detail::replay(q, trace, r, [](std::uint64_t, const oracle::RefQueue&) { return true; });
  } else {
    Tree q(p.tree_config(), store);
    oracle::MarkLog marks(&q);
    q.set_observer(&marks);
    detail::replay(q, trace, r, [&](std::uint64_t i, const oracle::RefQueue& ref) {
      if (!opts.check_invariants) return true;
      ++r.invariant_checks;
      auto rep = oracle::check_invariants(q.snapshot(), marks, &ref);
      if (rep.ok()) return true;
      r.ok = false;
      r.diverged_at = i;
      r.detail = "invariant violation after op " + std::to_string(i) + " (" +
                 [&] { std::ostringstream os; os << trace[i]; return os.str(); }() + ")";
      r.report = std::move(rep);
      return false;
    });
    r.mark_events = marks.events();
    for (unsigned k = 0; k < 4; ++k) r.procs[k] = q.proc_record(static_cast<Proc>(k));
  }
  r.io = store.snapshot_stats();
  r.peak_pinned = store.peak_pinned_words();
  return r;
}

struct BackendCost {
  std::string backend;
  std::uint64_t ops = 0;
  emx::IoStats io;
  double amortized = 0;
  std::uint64_t peak_pinned = 0;
  unsigned height = 0;
  std::uint64_t fanout = 0;
  std::uint64_t node_entries = 0;  // list capacity per node
  std::array<ProcRecord, 4> procs{};
};

struct CostReport {
  emx::ModelParams model;
  double epsilon = 0;
  std::vector<BackendCost> rows;

  /// (1/B) log2(N/B) / log2 log2 N
  double bound_new() const {
    const double n = static_cast<double>(model.n), b = static_cast<double>(model.b);
    return std::log2(n / b) / std::log2(std::log2(n)) / b;
  }
  /// (1/B) log2(N/B)
  double bound_old() const {
    const double n = static_cast<double>(model.n), b = static_cast<double>(model.b);
    return std::log2(n / b) / b;
  }
  const BackendCost* find(const std::string& name) const {
    for (const auto& r : rows)
      if (r.backend == name) return &r;
    return nullptr;
  }
};

/// Runs the trace on each backend with a fresh store and records transfers
/// after construction.
inline CostReport run_bench(const Trace& trace, const Params& p, const std::vector<Backend>& backends) {
  CostReport rep{p.model, p.epsilon, {}};
  for (auto b : backends) {
    emx::BlockStore store(p.model, p.store_options());
    BackendCost row;
    row.backend = backend_name(b);
    row.ops = trace.size();
    const auto run = [&](auto& q) {
      store.reset_stats();
      for (const auto& op : trace) apply(q, op);
      row.io = store.snapshot_stats();
    };
    if (b == Backend::Xpq) {
      Tree q(p.tree_config(), store);
      run(q);
      row.height = q.topology().height();
      row.fanout = q.config().t;
      row.node_entries = q.config().list_limit();
      for (unsigned k = 0; k < 4; ++k) row.procs[k] = q.proc_record(static_cast<Proc>(k));
    } else {
      KTree q(p.model, store);
      run(q);
      row.height = q.topology().height();
      row.fanout = 2;
      row.node_entries = q.capacity();
    }
    row.amortized = row.ops == 0 ? 0.0 : static_cast<double>(row.io.transfers()) / row.ops;
    row.peak_pinned = store.peak_pinned_words();
    rep.rows.push_back(row);
  }
  return rep;
}

inline std::string format_table(const CostReport& r) {
  std::ostringstream os;
  os << "N=" << r.model.n << " B=" << r.model.b << " M=" << r.model.m << " eps=" << r.epsilon << '\n';
  os << std::left << std::setw(8) << "backend" << std::right << std::setw(4) << "h" << std::setw(4)
     << "t" << std::setw(8) << "node" << std::setw(10) << "ops" << std::setw(12) << "reads"
     << std::setw(12) << "writes" << std::setw(12) << "total" << std::setw(10) << "io/op"
     << std::setw(10) << "peak" << '\n';
  for (const auto& x : r.rows) {
    os << std::left << std::setw(8) << x.backend << std::right << std::setw(4) << x.height
       << std::setw(4) << x.fanout << std::setw(8) << x.node_entries << std::setw(10) << x.ops
       << std::setw(12) << x.io.reads << std::setw(12) << x.io.writes << std::setw(12)
       << x.io.transfers() << std::setw(10) << std::fixed << std::setprecision(4) << x.amortized
       << std::setw(10) << x.peak_pinned << '\n';
  }
  os << std::fixed << std::setprecision(4) << "bound (1/B)log(N/B)/loglogN = " << r.bound_new()
     << "  (1/B)log(N/B) = " << r.bound_old() << '\n';
  if (const auto* x = r.find("xpq"); x != nullptr && x->ops > 0) {
    for (unsigned k = 0; k < 4; ++k)
      os << kProcNames[k] << ": calls=" << x->procs[k].calls << " max_own=" << x->procs[k].max_own
         << '\n';
  }
  return os.str();
}

inline std::string format_csv(const CostReport& r) {
  std::ostringstream os;
  os << "backend,n,b,m,h,t,node_entries,ops,reads,writes,total,io_per_op,peak_pinned,bound_new,bound_old\n";
  for (const auto& x : r.rows)
    os << x.backend << ',' << r.model.n << ',' << r.model.b << ',' << r.model.m << ',' << x.height
       << ',' << x.fanout << ',' << x.node_entries << ',' << x.ops << ',' << x.io.reads << ','
       << x.io.writes << ',' << x.io.transfers() << ',' << std::setprecision(8) << x.amortized << ','
       << x.peak_pinned << ',' << r.bound_new() << ',' << r.bound_old() << '\n';
  return os.str();
}

}  // namespace xpq::workload
