#pragma once

// Dijkstra over a block-resident adjacency layout, driven by any queue with
// update(k,p) / extract_min(). Vertices are labeled 1..|V|.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <queue>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xpq/emx.hpp"
#include "xpq/region.hpp"
#include "xpq/types.hpp"

namespace xpq::sssp {

using Vertex = std::uint64_t;
using Weight = std::uint64_t;
inline constexpr Weight kUnreachable = kInfinity;

struct Edge {
  Vertex u = 0;
  Vertex v = 0;
  Weight w = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct EdgeList {
  std::uint64_t vertices = 0;
  std::vector<Edge> edges;
};

class GraphParseError : public std::runtime_error {
 public:
  GraphParseError(std::size_t line, const std::string& what)
      : std::runtime_error("graph line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Reads "p sp V E" followed by one edge per line, "u v w" or "a u v w".
/// Lines starting with 'c' or '#' are comments.
inline EdgeList parse_graph(std::istream& in) {
  EdgeList g;
  bool header = false;
  std::string line;
  std::size_t no = 0;
  std::uint64_t declared_edges = 0;
  while (std::getline(in, line)) {
    ++no;
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first) || first == "c" || first[0] == '#') continue;
    if (first == "p") {
      std::string kind;
      if (header) throw GraphParseError(no, "duplicate header");
      if (!(ls >> kind >> g.vertices >> declared_edges) || kind != "sp")
        throw GraphParseError(no, "expected 'p sp V E'");
      header = true;
      continue;
    }
    if (!header) throw GraphParseError(no, "edge before 'p sp V E' header");
    long long u = 0, v = 0, w = 0;
    if (first == "a") {
      if (!(ls >> u)) throw GraphParseError(no, "expected 'a u v w'");
    } else {
      std::istringstream us(first);
      if (!(us >> u) || !us.eof()) throw GraphParseError(no, "expected 'u v w'");
    }
    if (!(ls >> v >> w)) throw GraphParseError(no, "expected 'u v w'");
    std::string extra;
    if (ls >> extra) throw GraphParseError(no, "trailing token '" + extra + "'");
    if (w < 0) throw GraphParseError(no, "negative weight");
    if (u < 1 || v < 1 || static_cast<std::uint64_t>(u) > g.vertices ||
        static_cast<std::uint64_t>(v) > g.vertices)
      throw GraphParseError(no, "vertex label out of range");
    g.edges.push_back({static_cast<Vertex>(u), static_cast<Vertex>(v), static_cast<Weight>(w)});
  }
  if (!header) throw GraphParseError(no, "missing 'p sp V E' header");
  if (declared_edges != g.edges.size())
    throw GraphParseError(no, "header declares " + std::to_string(declared_edges) + " edges, found " +
                                  std::to_string(g.edges.size()));
  return g;
}

inline std::string format_graph(const EdgeList& g) {
  std::ostringstream os;
  os << "p sp " << g.vertices << ' ' << g.edges.size() << '\n';
  for (const auto& e : g.edges) os << e.u << ' ' << e.v << ' ' << e.w << '\n';
  return os.str();
}

/// Random directed multigraph with weights in [0, max_weight].
inline EdgeList random_graph(std::uint64_t vertices, std::uint64_t edges, Weight max_weight,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  EdgeList g{vertices, {}};
  g.edges.reserve(edges);
  for (std::uint64_t i = 0; i < edges; ++i)
    g.edges.push_back({rng() % vertices + 1, rng() % vertices + 1, rng() % (max_weight + 1)});
  return g;
}

/// Adjacency lists on disk. Each vertex with outgoing edges owns a run of
/// blocks starting at a block boundary: [degree, (v, w) * degree]. The
/// vertex -> first block map is layout metadata, like a tree's node ids.
class ExtGraph {
 public:
  static ExtGraph ingest(emx::BlockStore& store, const EdgeList& g) {
    ExtGraph out(store, g.vertices);
    std::vector<Edge> sorted = g.edges;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Edge& a, const Edge& b) { return a.u < b.u; });
    const auto b = store.block_words();
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j].u == sorted[i].u) ++j;
      std::vector<Word> words{static_cast<Word>(j - i)};
      for (std::size_t x = i; x < j; ++x) {
        words.push_back(sorted[x].v);
        words.push_back(sorted[x].w);
      }
      auto& region = out.regions_[sorted[i].u];
      for (std::uint64_t n = 0; n < blocks_for(words.size(), b); ++n) region.push_back(store.alloc_block());
      write_region(store, region, words);
      i = j;
    }
    out.edges_ = g.edges.size();
    return out;
  }

  std::uint64_t vertices() const { return vertices_; }
  std::uint64_t edges() const { return edges_; }

  /// Outgoing (v, w) pairs of u; reads ceil((1 + 2 deg) / B) blocks.
  std::vector<std::pair<Vertex, Weight>> adjacency(Vertex u) {
    if (u < 1 || u > vertices_) throw std::out_of_range("vertex " + std::to_string(u) + " out of range");
    std::vector<std::pair<Vertex, Weight>> out;
    const auto& region = regions_[u];
    if (region.empty()) return out;
    const auto b = store_->block_words();
    std::vector<Word> words(b);
    auto pin = store_->pin(b);
    store_->read_block(region[0], words);
    const auto deg = words[0];
    const auto total = blocks_for(1 + 2 * deg, b);
    pin.release();
    pin = store_->pin(total * b);
    if (total > 1) {
      std::vector<Word> rest;
      read_region(*store_, region, 1, total - 1, rest);
      words.insert(words.end(), rest.begin(), rest.end());
    }
    for (std::uint64_t i = 0; i < deg; ++i) out.emplace_back(words[1 + 2 * i], words[2 + 2 * i]);
    return out;
  }

  /// All edges, grouped by source vertex.
  std::vector<Edge> enumerate() {
    std::vector<Edge> out;
    for (Vertex u = 1; u <= vertices_; ++u)
      for (auto [v, w] : adjacency(u)) out.push_back({u, v, w});
    return out;
  }

 private:
  ExtGraph(emx::BlockStore& store, std::uint64_t vertices)
      : store_(&store), vertices_(vertices), regions_(vertices + 1) {}

  emx::BlockStore* store_;
  std::uint64_t vertices_;
  std::uint64_t edges_ = 0;
  std::vector<Region> regions_;
};

struct SsspResult {
  std::vector<Weight> dist;  // index 0 unused; kUnreachable when not reached
  emx::IoStats io;           // everything during the run
  emx::IoStats adjacency_io;
  emx::IoStats queue_io() const { return io - adjacency_io; }
  std::uint64_t updates = 0;
  std::uint64_t extracts = 0;
  std::uint64_t stale = 0;
};

/// Dijkstra with DecreaseKey: each relaxation of an unsettled neighbour is a
/// plain update; the queue keeps the minimum. Distances go straight to the
/// result, which is output and not working memory.
template <class Queue>
SsspResult dijkstra(ExtGraph& g, emx::BlockStore& store, Vertex source, Queue& q) {
  if (source < 1 || source > g.vertices())
    throw std::out_of_range("source " + std::to_string(source) + " out of range");
  SsspResult r;
  r.dist.assign(g.vertices() + 1, kUnreachable);
  const auto pin = store.pin((g.vertices() + 64) / 64);
  std::vector<bool> settled(g.vertices() + 1, false);
  const auto start = store.snapshot_stats();
  q.update(source, 0);
  ++r.updates;
  while (auto e = q.extract_min()) {
    ++r.extracts;
    if (settled[e->key]) {
      ++r.stale;
      continue;
    }
    settled[e->key] = true;
    r.dist[e->key] = e->priority;
    const auto before = store.snapshot_stats();
    auto adj = g.adjacency(e->key);
    r.adjacency_io += store.snapshot_stats() - before;
    const auto adj_pin = store.pin(2 * adj.size());
    for (auto [v, w] : adj) {
      if (settled[v]) continue;
      q.update(v, e->priority + w);
      ++r.updates;
    }
  }
  r.io = store.snapshot_stats() - start;
  return r;
}

/// In-memory reference with a binary heap and lazy deletion.
inline std::vector<Weight> reference_dijkstra(const EdgeList& g, Vertex source) {
  std::vector<std::vector<std::pair<Vertex, Weight>>> adj(g.vertices + 1);
  for (const auto& e : g.edges) adj[e.u].emplace_back(e.v, e.w);
  std::vector<Weight> dist(g.vertices + 1, kUnreachable);
  using Item = std::pair<Weight, Vertex>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[source] = 0;
  pq.push({0, source});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d != dist[u]) continue;
    for (auto [v, w] : adj[u]) {
      if (d + w < dist[v]) {
        dist[v] = d + w;
        pq.push({dist[v], v});
      }
    }
  }
  return dist;
}

}  // namespace xpq::sssp
