#include "rlmix/network_io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

namespace rlmix {

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

[[noreturn]] void fail(std::size_t line_no, const std::string& msg) {
  throw InvalidInput("line " + std::to_string(line_no) + ": " + msg);
}

bool next_line(std::istream& is, std::string& line) {
  if (!std::getline(is, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    throw InvalidInput("malformed " + std::string(what) + " '" + std::string(text) + "'");
  return v;
}

Index parse_index(std::string_view text, std::string_view what) {
  long long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    throw InvalidInput("malformed " + std::string(what) + " '" + std::string(text) + "'");
  return static_cast<Index>(v);
}

void write_network(std::ostream& os, const Network& network) {
  os << network.num_nodes() << ',' << network.num_arcs() << '\n';
  for (NodeId n = 0; n < network.num_nodes(); ++n) {
    const Node& node = network.node(n);
    os << n << ',';
    if (node.position) os << format_double(node.position->x) << ',' << format_double(node.position->y);
    else os << ',';
    os << ',' << to_string(node.kind) << '\n';
  }
  for (const Arc& a : network.arcs()) {
    os << a.tail << ',' << a.head << ',' << format_double(a.length) << ','
       << format_double(a.speed_min) << ',' << format_double(a.speed_max) << ','
       << to_string(a.cls) << '\n';
  }
}

Network read_network(std::istream& is, NetworkOptions opts) {
  std::string line;
  std::size_t line_no = 0;
  if (!next_line(is, line)) throw InvalidInput("empty network file");
  ++line_no;
  auto header = split_fields(line, ',');
  if (header.size() != 2) fail(line_no, "expected '<nodes>,<arcs>' header");
  Index num_nodes = 0, num_arcs = 0;
  try {
    num_nodes = parse_index(header[0], "node count");
    num_arcs = parse_index(header[1], "arc count");
  } catch (const InvalidInput& e) {
    fail(line_no, e.what());
  }
  if (num_nodes < 0 || num_arcs < 0) fail(line_no, "negative count");
  std::vector<Node> nodes;
  std::vector<Arc> arcs;
  nodes.reserve(static_cast<std::size_t>(num_nodes));
  arcs.reserve(static_cast<std::size_t>(num_arcs));
  try {
    for (Index i = 0; i < num_nodes; ++i) {
      if (!next_line(is, line)) fail(line_no + 1, "missing node record");
      ++line_no;
      auto f = split_fields(line, ',');
      if (f.size() != 4) fail(line_no, "node record needs 4 fields");
      if (parse_index(f[0], "node id") != i) fail(line_no, "node ids must be sequential");
      Node node;
      if (!f[1].empty() || !f[2].empty())
        node.position = Point{parse_double(f[1], "x"), parse_double(f[2], "y")};
      if (f[3] == "plain") node.kind = NodeKind::plain;
      else if (f[3] == "control") node.kind = NodeKind::intersection_control;
      else fail(line_no, "unknown node kind '" + std::string(f[3]) + "'");
      nodes.push_back(node);
    }
    for (Index i = 0; i < num_arcs; ++i) {
      if (!next_line(is, line)) fail(line_no + 1, "missing arc record");
      ++line_no;
      auto f = split_fields(line, ',');
      if (f.size() != 6) fail(line_no, "arc record needs 6 fields");
      Arc a;
      a.tail = parse_index(f[0], "tail");
      a.head = parse_index(f[1], "head");
      a.length = parse_double(f[2], "length");
      a.speed_min = parse_double(f[3], "speed_min");
      a.speed_max = parse_double(f[4], "speed_max");
      if (f[5] == "residential") a.cls = ArcClass::residential;
      else if (f[5] == "non_residential") a.cls = ArcClass::non_residential;
      else fail(line_no, "unknown arc class '" + std::string(f[5]) + "'");
      arcs.push_back(a);
    }
  } catch (const InvalidInput& e) {
    const std::string msg = e.what();
    if (msg.rfind("line ", 0) == 0) throw;
    fail(line_no, msg);
  }
  if (next_line(is, line) && !line.empty()) fail(line_no + 1, "trailing content");
  return build_network(std::move(nodes), std::move(arcs), opts);
}

void save_network(const std::filesystem::path& path, const Network& network) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_network(os, network);
}

Network load_network(const std::filesystem::path& path, NetworkOptions opts) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open " + path.string());
  return read_network(is, opts);
}

void write_travel_times(std::ostream& os, const Network& network, const Eigen::VectorXd& times) {
  if (times.size() != network.num_arcs())
    throw InvalidInput("travel time table does not match the network's arc count");
  os << "arc,tail,head,minutes\n";
  for (ArcId a = 0; a < network.num_arcs(); ++a)
    os << a << ',' << network.arc(a).tail << ',' << network.arc(a).head << ','
       << format_double(times[a]) << '\n';
}

Eigen::VectorXd read_travel_times(std::istream& is, const Network& network) {
  std::string line;
  if (!next_line(is, line) || line != "arc,tail,head,minutes")
    throw InvalidInput("line 1: expected header 'arc,tail,head,minutes'");
  Eigen::VectorXd t(network.num_arcs());
  std::size_t line_no = 1;
  for (ArcId a = 0; a < network.num_arcs(); ++a) {
    if (!next_line(is, line)) fail(line_no + 1, "missing travel time row");
    ++line_no;
    auto f = split_fields(line, ',');
    if (f.size() != 4) fail(line_no, "travel time row needs 4 fields");
    try {
      if (parse_index(f[0], "arc") != a || parse_index(f[1], "tail") != network.arc(a).tail ||
          parse_index(f[2], "head") != network.arc(a).head)
        fail(line_no, "row does not match the network's arc order");
      t[a] = parse_double(f[3], "minutes");
    } catch (const InvalidInput& e) {
      const std::string msg = e.what();
      if (msg.rfind("line ", 0) == 0) throw;
      fail(line_no, msg);
    }
  }
  return t;
}

void save_travel_times(const std::filesystem::path& path, const Network& network,
                       const Eigen::VectorXd& times) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_travel_times(os, network, times);
}

Eigen::VectorXd load_travel_times(const std::filesystem::path& path, const Network& network) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open " + path.string());
  return read_travel_times(is, network);
}

}  // namespace rlmix
