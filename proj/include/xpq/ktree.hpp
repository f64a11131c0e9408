#pragma once

// Baseline: the binary external-memory tournament tree. Every node holds up
// to m entries and an m-signal buffer; pushing signals down loads both
// children's lists in full, so membership is exact and no todo buffers or
// filters are needed. Keys map to ceil(N/m) leaves, m consecutive keys each.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xpq/emx.hpp"
#include "xpq/pq.hpp"
#include "xpq/region.hpp"
#include "xpq/types.hpp"

namespace xpq {

class KTree {
 public:
  static constexpr std::uint64_t kHeaderWords = 5;

  /// Node capacity in entries for a memory of M words: the largest working
  /// set (root plus a push frame) is about 20 m words.
  static std::uint64_t default_capacity(const emx::ModelParams& p) {
    return std::max<std::uint64_t>(2, p.m / 32);
  }

  KTree(emx::ModelParams model, emx::BlockStore& store, std::uint64_t capacity = 0)
      : model_(model), store_(store), m_(capacity != 0 ? capacity : default_capacity(model)),
        topo_(2, m_, model.n) {
    model_.validate();
    const auto b = model_.b;
    layout_.resize(topo_.node_count());
    for (NodeId v = 1; v < topo_.node_count(); ++v) {
      auto alloc = [&](Region& into, std::uint64_t words) {
        for (std::uint64_t i = 0; i < xpq::blocks_for(words, b); ++i) into.push_back(store_.alloc_block());
      };
      alloc(layout_[v].header, kHeaderWords);
      alloc(layout_[v].list, 2 * list_capacity());
      if (!topo_.is_leaf(v)) alloc(layout_[v].signals, 2 * signal_capacity());
    }
    root_pin_ = store_.pin(2 * (m_ + 1) + 2 * (m_ + 1));
  }

  KTree(const KTree&) = delete;
  KTree& operator=(const KTree&) = delete;

  std::uint64_t capacity() const { return m_; }
  const Topology& topology() const { return topo_; }

  void update(Key k, Priority p) {
    check_key(k);
    if (p == kInfinity) throw DomainError("priority +inf is reserved");
    auto& list = root_.list;
    if (auto it = find_key(list, k); it != list.end()) {
      if (p < it->priority) {
        it->priority = p;
        sort_desc(list);
      }
      return;
    }
    root_.h.active = true;
    if (topo_.height() == 0) {
      list.push_back({k, p});
      sort_desc(list);
      return;
    }
    if (rank_of(k, p) > root_.h.boundary) {
      push_root(Signal::update(k, p));
      return;
    }
    list.push_back({k, p});
    sort_desc(list);
    push_root(Signal::del(k));
    if (list.size() > m_) empty(Topology::root());
  }

  void erase(Key k) {
    check_key(k);
    auto& list = root_.list;
    if (auto it = find_key(list, k); it != list.end()) {
      list.erase(it);
      if (list.empty()) fill(Topology::root());
      return;
    }
    if (topo_.height() == 0) return;
    root_.h.active = true;
    push_root(Signal::del(k));
  }

  std::optional<Entry> extract_min() {
    auto& list = root_.list;
    if (list.empty()) {
      if (topo_.height() == 0 || !root_.h.active) return std::nullopt;
      fill(Topology::root());
      if (list.empty()) return std::nullopt;
    }
    const Entry e = list.back();
    erase(e.key);
    return e;
  }

 private:
  struct Header {
    Rank boundary = Rank::infinite();
    std::uint64_t list_len = 0;
    std::uint64_t signal_count = 0;
    bool active = false;
  };
  struct Layout {
    Region header, list, signals;
  };
  // A loaded child: header plus, when needed, its whole list.
  struct Loaded {
    NodeId id = 0;
    Header h;
    std::vector<Entry> list;
    bool list_loaded = false;
    bool list_dirty = false;
    emx::PinToken pin;
  };

  // Overflow is handled after a whole batch: a list may take 2m+1 entries
  // from an emptying parent on top of m, and a signal buffer m+1 signals on
  // top of m.
  std::uint64_t list_capacity() const { return 3 * m_ + 1; }
  std::uint64_t signal_capacity() const { return 2 * m_ + 1; }
  std::uint64_t half() const { return std::max<std::uint64_t>(1, m_ / 2); }

  Header read_header(NodeId v) {
    std::vector<Word> w;
    read_region(store_, layout_[v].header, 0, layout_[v].header.size(), w);
    return {{~w[0], ~w[1]}, w[2], w[3], w[4] != 0};
  }
  void write_header(NodeId v, const Header& h) {
    const Word w[kHeaderWords] = {~h.boundary.priority, ~h.boundary.key, h.list_len, h.signal_count,
                                  h.active ? Word{1} : Word{0}};
    write_region(store_, layout_[v].header, w);
  }

  void load_list(Loaded& c) {
    c.pin = store_.pin(2 * list_capacity());
    c.list = read_records<Entry>(store_, layout_[c.id].list, c.h.list_len);
    c.list_loaded = true;
  }
  void store_child(Loaded& c) {
    if (c.list_dirty) {
      sort_desc(c.list);
      write_records(store_, layout_[c.id].list, c.list);
      c.h.list_len = c.list.size();
    }
    write_header(c.id, c.h);
  }

  void push_root(const Signal& s) {
    root_.signals.push_back(s);
    if (root_.signals.size() > m_) push(Topology::root());
  }

  // Signals go down in rounds of at most m+1, so a child's buffer never
  // exceeds 2m+1 before its own overflow is handled between rounds.
  void push(NodeId v) {
    if (topo_.is_leaf(v)) return;
    const bool root = topo_.is_root(v);
    std::vector<Signal> root_sigs;
    std::uint64_t total = 0;
    if (root) {
      root_sigs = std::move(root_.signals);
      root_.signals.clear();
      total = root_sigs.size();
    } else {
      Header vh = read_header(v);
      total = vh.signal_count;
      vh.signal_count = 0;
      write_header(v, vh);
    }
    for (std::uint64_t off = 0; off < total; off += m_ + 1) {
      const auto n = std::min(m_ + 1, total - off);
      std::vector<Signal> sigs;
      emx::PinToken pin;
      if (root) {
        sigs.assign(root_sigs.begin() + static_cast<std::ptrdiff_t>(off),
                    root_sigs.begin() + static_cast<std::ptrdiff_t>(off + n));
      } else {
        const auto b = model_.b;
        const auto first = 2 * off / b;
        const auto last = xpq::blocks_for(2 * (off + n), b);
        pin = store_.pin((last - first) * b);
        std::vector<Word> words;
        read_region(store_, layout_[v].signals, first, last - first, words);
        for (std::uint64_t i = 0; i < n; ++i)
          sigs.push_back(decode_signal(words.data() + 2 * (off + i) - first * b));
      }
      push_round(v, sigs);
    }
  }

  void push_round(NodeId v, const std::vector<Signal>& sigs) {
    const auto kids = topo_.children(v);
    std::vector<Header> after;
    {
      std::vector<Loaded> ctx(kids.size());
      for (std::size_t j = 0; j < kids.size(); ++j) {
        ctx[j].id = kids[j];
        ctx[j].h = read_header(kids[j]);
        load_list(ctx[j]);
      }
      {
        std::vector<std::optional<RecordAppender>> out(kids.size());
        for (const Signal& s : sigs) {
          const auto j = topo_.child_slot(v, s.key);
          auto& c = ctx[j];
          const bool leaf = topo_.is_leaf(c.id);
          auto it = find_key(c.list, s.key);
          c.h.active = true;
          const auto forward = [&](const Signal& f) {
            if (leaf) return;
            if (!out[j]) out[j].emplace(store_, layout_[c.id].signals, 2 * c.h.signal_count);
            out[j]->put(f);
            ++c.h.signal_count;
          };
          if (s.is_delete()) {
            if (it != c.list.end()) {
              c.list.erase(it);
              c.list_dirty = true;
            }
            forward(s);
          } else if (it != c.list.end()) {
            if (s.priority < it->priority) {
              it->priority = s.priority;
              c.list_dirty = true;
            }
          } else if (leaf || rank_of(s.key, s.priority) <= c.h.boundary) {
            c.list.push_back({s.key, s.priority});
            c.list_dirty = true;
            forward(Signal::del(s.key));
          } else {
            forward(s);
          }
        }
      }
      for (auto& c : ctx) {
        store_child(c);
        after.push_back(c.h);
      }
    }
    for (std::size_t j = 0; j < kids.size(); ++j) {
      if (after[j].list_len > m_)
        empty(kids[j]);
      else if (after[j].signal_count > m_)
        push(kids[j]);
    }
  }

  void empty(NodeId v) {
    if (topo_.is_leaf(v)) return;
    const bool root = topo_.is_root(v);
    if (root ? !root_.signals.empty() : read_header(v).signal_count > 0) push(v);
    Header vh = root ? root_.h : read_header(v);
    std::vector<Entry> local;
    emx::PinToken pin;
    if (!root) {
      pin = store_.pin(2 * list_capacity());
      local = read_records<Entry>(store_, layout_[v].list, vh.list_len);
    }
    auto& list = root ? root_.list : local;
    if (list.size() <= half()) return;
    const auto excess = list.size() - half();
    const auto kids = topo_.children(v);
    std::vector<Header> hs;
    for (auto c : kids) hs.push_back(read_header(c));
    {
      std::vector<std::optional<RecordAppender>> out(kids.size());
      for (std::uint64_t i = 0; i < excess; ++i) {
        const auto j = topo_.child_slot(v, list[i].key);
        if (!out[j]) out[j].emplace(store_, layout_[kids[j]].list, 2 * hs[j].list_len);
        out[j]->put(list[i]);
        ++hs[j].list_len;
        hs[j].active = true;
      }
    }
    for (std::size_t j = 0; j < kids.size(); ++j) write_header(kids[j], hs[j]);
    list.erase(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(excess));
    vh.boundary = rank_of(list.front());
    vh.list_len = list.size();
    if (root) {
      root_.h = vh;
    } else {
      write_records(store_, layout_[v].list, list);
      write_header(v, vh);
      pin = {};
    }
    for (std::size_t j = 0; j < kids.size(); ++j)
      if (hs[j].list_len > m_) empty(kids[j]);
  }

  void fill(NodeId v) {
    if (topo_.is_leaf(v)) return;
    const bool root = topo_.is_root(v);
    if (root ? !root_.signals.empty() : read_header(v).signal_count > 0) push(v);
    const auto kids = topo_.children(v);
    for (;;) {
      for (auto c : kids) {
        const auto h = read_header(c);
        if (h.list_len == 0 && h.active && !topo_.is_leaf(c)) fill(c);
      }
      Header vh = root ? root_.h : read_header(v);
      std::vector<Entry> local;
      emx::PinToken pin;
      if (!root) {
        pin = store_.pin(2 * list_capacity());
        local = read_records<Entry>(store_, layout_[v].list, vh.list_len);
      }
      auto& list = root ? root_.list : local;
      std::vector<Loaded> ctx(kids.size());
      for (std::size_t j = 0; j < kids.size(); ++j) {
        ctx[j].id = kids[j];
        ctx[j].h = read_header(kids[j]);
        if (ctx[j].h.list_len > 0) load_list(ctx[j]);
      }
      std::optional<NodeId> refill;
      bool exhausted = false;
      while (list.size() < half()) {
        Loaded* best = nullptr;
        for (auto& c : ctx)
          if (!c.list.empty() && (best == nullptr || rank_of(c.list.back()) < rank_of(best->list.back())))
            best = &c;
        if (best == nullptr) {
          exhausted = true;
          break;
        }
        list.push_back(best->list.back());
        best->list.pop_back();
        best->list_dirty = true;
        if (best->list.empty() && best->h.active && !topo_.is_leaf(best->id)) {
          refill = best->id;
          break;
        }
      }
      for (auto& c : ctx)
        if (c.list_dirty) store_child(c);
      ctx.clear();
      sort_desc(list);
      if (!list.empty()) {
        vh.boundary = rank_of(list.front());
        vh.active = true;
      } else if (exhausted) {
        vh.boundary = Rank::infinite();
        vh.active = false;
      }
      vh.list_len = list.size();
      if (root) {
        root_.h = vh;
      } else {
        write_records(store_, layout_[v].list, list);
        write_header(v, vh);
      }
      if (!refill) return;
      pin = {};
      fill(*refill);
    }
  }

  static std::vector<Entry>::iterator find_key(std::vector<Entry>& list, Key k) {
    return std::find_if(list.begin(), list.end(), [&](const Entry& e) { return e.key == k; });
  }
  static void sort_desc(std::vector<Entry>& list) {
    std::sort(list.begin(), list.end(),
              [](const Entry& a, const Entry& b) { return rank_of(a) > rank_of(b); });
  }
  void check_key(Key k) const {
    if (k < 1 || k > model_.n)
      throw DomainError("key " + std::to_string(k) + " outside {1.." + std::to_string(model_.n) + "}");
  }

  emx::ModelParams model_;
  emx::BlockStore& store_;
  std::uint64_t m_;
  Topology topo_;
  std::vector<Layout> layout_;
  struct {
    Header h;
    std::vector<Entry> list;
    std::vector<Signal> signals;
  } root_;
  emx::PinToken root_pin_;
};

}  // namespace xpq
