// xpq: workload generation, differential replay, invariant checking, I/O
// cost measurement and shortest paths over the block store.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xpq/workload.hpp"

namespace {

using namespace xpq;

struct Common {
  std::uint64_t n = 1 << 16;
  std::uint64_t b = 64;
  std::uint64_t m = 1 << 14;
  std::uint64_t t = 4;
  double epsilon = 1.0 / 1024;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string backend = "xpq";
  bool check_invariants = false;
  std::uint64_t inject_fp = 0;
  bool paper_params = false;
  bool no_budget = false;
  std::string format = "table";
  // trace source
  std::string trace_file;
  std::string kind = "random-mixed";
  std::uint64_t ops = 10000;

  std::uint64_t effective_seed() const {
    if (seed_set) return seed;
    if (const char* env = std::getenv("XPQ_SEED")) return std::stoull(env);
    return 1;
  }

  workload::Params params(std::uint64_t n_override = 0) const {
    workload::Params p;
    p.model = {n_override != 0 ? n_override : n, b, m, 64};
    p.t = paper_params ? TreeConfig::default_fanout(p.model.n) : t;
    p.epsilon = paper_params ? TreeConfig::default_epsilon(p.model.n) : epsilon;
    p.seed = effective_seed();
    p.inject_fp_every = inject_fp;
    p.enforce_budget = !no_budget;
    return p;
  }

  Trace trace() const {
    if (!trace_file.empty()) {
      std::ifstream in(trace_file);
      if (!in) throw std::runtime_error("cannot open " + trace_file);
      return read_trace(in);
    }
    return workload::generate({workload::parse_kind(kind), ops, n, effective_seed()});
  }
};

void model_flags(CLI::App* app, Common& c) {
  app->add_option("--n", c.n, "key universe N");
  app->add_option("--b", c.b, "block size B in words");
  app->add_option("--m", c.m, "memory size M in words");
  app->add_option("--t", c.t, "tree fanout");
  app->add_option("--epsilon", c.epsilon, "filter false-positive rate");
  app->add_option("--seed", c.seed, "seed (falls back to $XPQ_SEED, then 1)")
      ->each([&c](const std::string&) { c.seed_set = true; });
  app->add_flag("--paper-params", c.paper_params, "t = floor(log2(N)^0.01), eps = 1/log2(N)^3");
  app->add_flag("--no-budget", c.no_budget, "record peak memory without enforcing M");
}

void trace_flags(CLI::App* app, Common& c) {
  app->add_option("--trace", c.trace_file, "trace file (otherwise a generated workload)");
  app->add_option("--kind", c.kind, "workload kind for generated traces");
  app->add_option("--ops", c.ops, "operation count for generated traces");
}

void print_procs(const std::array<ProcRecord, 4>& procs) {
  for (unsigned k = 0; k < 4; ++k)
    std::cout << "  " << kProcNames[k] << ": calls=" << procs[k].calls
              << " max_own=" << procs[k].max_own << '\n';
}

int run_diff_verb(const Common& c, bool force_invariants) {
  const auto trace = c.trace();
  const auto backend = workload::parse_backend(c.backend);
  const auto r = workload::run_diff(trace, c.params(), backend,
                                    {force_invariants || c.check_invariants});
  if (r.ok) {
    std::cout << "pass ops=" << r.ops << " backend=" << c.backend;
    if (r.invariant_checks > 0)
      std::cout << " invariant_checks=" << r.invariant_checks << " marks=" << r.mark_events;
    std::cout << '\n';
  } else {
    std::cout << "FAIL " << r.detail << '\n';
    if (!r.report.ok()) std::cout << r.report.to_text();
  }
  std::cout << "io reads=" << r.io.reads << " writes=" << r.io.writes
            << " peak_pinned=" << r.peak_pinned << '\n';
  if (backend == workload::Backend::Xpq) print_procs(r.procs);
  return r.ok ? 0 : 1;
}

int run_bench_verb(const Common& c, bool both) {
  const auto trace = c.trace();
  std::vector<workload::Backend> backends;
  if (both)
    backends = {workload::Backend::Xpq, workload::Backend::KTree};
  else
    backends = {workload::parse_backend(c.backend)};
  const auto rep = workload::run_bench(trace, c.params(), backends);
  if (c.format == "csv")
    std::cout << workload::format_csv(rep);
  else
    std::cout << workload::format_table(rep);
  return 0;
}

int run_sssp_verb(const Common& c, const std::string& graph_file, sssp::Vertex source) {
  std::ifstream in(graph_file);
  if (!in) throw std::runtime_error("cannot open " + graph_file);
  const auto g = sssp::parse_graph(in);
  // Queue keys are vertex labels, so the universe must cover |V|.
  const auto p = c.params(std::max(g.vertices, c.m));
  emx::BlockStore store(p.model, p.store_options());
  auto eg = sssp::ExtGraph::ingest(store, g);
  store.reset_stats();
  sssp::SsspResult r;
  if (workload::parse_backend(c.backend) == workload::Backend::Xpq) {
    Tree q(p.tree_config(), store);
    r = sssp::dijkstra(eg, store, source, q);
  } else {
    KTree q(p.model, store);
    r = sssp::dijkstra(eg, store, source, q);
  }
  for (sssp::Vertex v = 1; v <= g.vertices; ++v) {
    std::cout << v << ' ';
    if (r.dist[v] == sssp::kUnreachable)
      std::cout << "inf\n";
    else
      std::cout << r.dist[v] << '\n';
  }
  const auto qio = r.queue_io();
  std::cout << "# io reads=" << r.io.reads << " writes=" << r.io.writes
            << " total=" << r.io.transfers() << " adjacency=" << r.adjacency_io.transfers()
            << " queue=" << qio.transfers() << " updates=" << r.updates
            << " extracts=" << r.extracts << " peak_pinned=" << store.peak_pinned_words() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"external-memory priority queue with decrease-key"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen", "write a generated trace");
  std::string out_file;
  gen->add_option("--kind", c.kind, "random-mixed|insert-heavy|decrease-heavy|sorted-drain|sssp-derived");
  gen->add_option("--ops", c.ops, "operation count");
  gen->add_option("--n", c.n, "key universe N");
  gen->add_option("--seed", c.seed, "seed (falls back to $XPQ_SEED, then 1)")
      ->each([&c](const std::string&) { c.seed_set = true; });
  gen->add_option("-o,--out", out_file, "output file (default stdout)");

  auto* diff = app.add_subcommand("diff", "replay a trace against the reference queue");
  model_flags(diff, c);
  trace_flags(diff, c);
  diff->add_option("--backend", c.backend, "xpq|ktree")->check(CLI::IsMember({"xpq", "ktree"}));
  diff->add_flag("--check-invariants", c.check_invariants, "check all invariants after each op");
  diff->add_option("--inject-fp", c.inject_fp, "force a filter false positive every k-th probe");

  auto* inv = app.add_subcommand("invariants", "replay with invariant checks after every op");
  model_flags(inv, c);
  trace_flags(inv, c);
  inv->add_option("--inject-fp", c.inject_fp, "force a filter false positive every k-th probe");

  auto* bench = app.add_subcommand("bench", "measure block transfers per operation");
  model_flags(bench, c);
  trace_flags(bench, c);
  bench->add_option("--backend", c.backend, "xpq|ktree (default: both)")
      ->check(CLI::IsMember({"xpq", "ktree"}));
  bench->add_option("--format", c.format, "table|csv")->check(CLI::IsMember({"table", "csv"}));
  bench->add_option("--inject-fp", c.inject_fp, "force a filter false positive every k-th probe");

  auto* ss = app.add_subcommand("sssp", "single-source shortest paths");
  std::string graph_file;
  sssp::Vertex source = 1;
  model_flags(ss, c);
  ss->add_option("graph", graph_file, "graph file ('p sp V E' then 'u v w' lines)")->required();
  ss->add_option("--source", source, "source vertex");
  ss->add_option("--backend", c.backend, "xpq|ktree")->check(CLI::IsMember({"xpq", "ktree"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto trace =
          workload::generate({workload::parse_kind(c.kind), c.ops, c.n, c.effective_seed()});
      std::ostringstream header;
      header << "kind=" << c.kind << " n=" << c.n << " ops=" << c.ops << " seed=" << c.effective_seed();
      if (out_file.empty()) {
        write_trace(std::cout, trace, header.str());
      } else {
        std::ofstream out(out_file);
        if (!out) throw std::runtime_error("cannot open " + out_file);
        write_trace(out, trace, header.str());
      }
      return 0;
    }
    if (diff->parsed()) return run_diff_verb(c, false);
    if (inv->parsed()) return run_diff_verb(c, true);
    if (bench->parsed()) return run_bench_verb(c, bench->count("--backend") == 0);
    if (ss->parsed()) return run_sssp_verb(c, graph_file, source);
  } catch (const std::exception& e) {
    std::cerr << "xpq: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
