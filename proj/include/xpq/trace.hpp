#pragma once

// Text traces: one operation per line.
//   U k p   update (insert / decrease-key)
//   D k     delete
//   X       extract-min
// Blank lines and lines starting with '#' are ignored.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "xpq/types.hpp"

namespace xpq {

struct Op {
  enum class Kind : std::uint8_t { Update, Delete, Extract };
  Kind kind = Kind::Extract;
  Key key = 0;
  Priority priority = 0;

  static Op update(Key k, Priority p) { return {Kind::Update, k, p}; }
  static Op del(Key k) { return {Kind::Delete, k, 0}; }
  static Op extract() { return {Kind::Extract, 0, 0}; }
  friend bool operator==(const Op&, const Op&) = default;
};

using Trace = std::vector<Op>;

class TraceParseError : public std::runtime_error {
 public:
  TraceParseError(std::size_t line, const std::string& what)
      : std::runtime_error("trace line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline std::ostream& operator<<(std::ostream& os, const Op& op) {
  switch (op.kind) {
    case Op::Kind::Update: return os << "U " << op.key << ' ' << op.priority;
    case Op::Kind::Delete: return os << "D " << op.key;
    case Op::Kind::Extract: return os << "X";
  }
  return os;
}

inline void write_trace(std::ostream& os, const Trace& t, const std::string& header = {}) {
  if (!header.empty()) os << "# " << header << '\n';
  for (const auto& op : t) os << op << '\n';
}

inline std::string format_trace(const Trace& t, const std::string& header = {}) {
  std::ostringstream os;
  write_trace(os, t, header);
  return os.str();
}

inline Trace read_trace(std::istream& in) {
  Trace out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    Op op;
    if (tag == "U") {
      op.kind = Op::Kind::Update;
      if (!(ls >> op.key >> op.priority)) throw TraceParseError(no, "expected 'U k p'");
    } else if (tag == "D") {
      op.kind = Op::Kind::Delete;
      if (!(ls >> op.key)) throw TraceParseError(no, "expected 'D k'");
    } else if (tag == "X") {
      op.kind = Op::Kind::Extract;
    } else {
      throw TraceParseError(no, "unknown operation '" + tag + "'");
    }
    std::string extra;
    if (ls >> extra) throw TraceParseError(no, "trailing token '" + extra + "'");
    out.push_back(op);
  }
  return out;
}

inline Trace parse_trace(const std::string& text) {
  std::istringstream in(text);
  return read_trace(in);
}

}  // namespace xpq
