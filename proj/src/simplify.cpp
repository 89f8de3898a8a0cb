#include "rlmix/network.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <utility>
#include <vector>

namespace rlmix {

namespace {

// Mutable copy of a network with tombstones; compacted at the end.
struct Work {
  std::vector<Node> nodes;
  std::vector<bool> node_alive;
  std::vector<Arc> arcs;
  std::vector<bool> arc_alive;

  explicit Work(const Network& net)
      : nodes(net.nodes().begin(), net.nodes().end()),
        node_alive(nodes.size(), true),
        arcs(net.arcs().begin(), net.arcs().end()),
        arc_alive(arcs.size(), true) {}

  std::size_t n() const { return nodes.size(); }

  void adjacency(std::vector<std::vector<std::size_t>>& out,
                 std::vector<std::vector<std::size_t>>& in) const {
    out.assign(n(), {});
    in.assign(n(), {});
    for (std::size_t a = 0; a < arcs.size(); ++a) {
      if (!arc_alive[a]) continue;
      out[static_cast<std::size_t>(arcs[a].tail)].push_back(a);
      in[static_cast<std::size_t>(arcs[a].head)].push_back(a);
    }
  }
};

Arc merge(const Arc& first, const Arc& second) {
  Arc m;
  m.tail = first.tail;
  m.head = second.head;
  m.length = first.length + second.length;
  // Harmonic combination keeps the free-flow and slowest traversal times.
  m.speed_max = m.length / (first.length / first.speed_max + second.length / second.speed_max);
  m.speed_min = m.length / (first.length / first.speed_min + second.length / second.speed_min);
  m.cls = (first.cls == ArcClass::residential && second.cls == ArcClass::residential)
              ? ArcClass::residential
              : ArcClass::non_residential;
  return m;
}

bool bypass_pass(Work& w, double max_length) {
  std::vector<std::vector<std::size_t>> out, in;
  w.adjacency(out, in);
  std::multiset<std::pair<NodeId, NodeId>> live;
  for (std::size_t a = 0; a < w.arcs.size(); ++a)
    if (w.arc_alive[a]) live.emplace(w.arcs[a].tail, w.arcs[a].head);
  std::vector<bool> touched(w.n(), false);
  bool changed = false;
  for (std::size_t m = 0; m < w.n(); ++m) {
    if (!w.node_alive[m] || touched[m] || w.nodes[m].kind != NodeKind::plain) continue;
    const auto& ins = in[m];
    const auto& outs = out[m];
    std::set<NodeId> nbrs;
    for (auto a : ins) nbrs.insert(w.arcs[a].tail);
    for (auto a : outs) nbrs.insert(w.arcs[a].head);
    if (nbrs.size() != 2) continue;
    const NodeId u = *nbrs.begin(), v = *nbrs.rbegin();
    if (touched[static_cast<std::size_t>(u)] || touched[static_cast<std::size_t>(v)]) continue;

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (ins.size() == 1 && outs.size() == 1) {
      if (w.arcs[ins[0]].tail == w.arcs[outs[0]].head) continue;
      pairs.emplace_back(ins[0], outs[0]);
    } else if (ins.size() == 2 && outs.size() == 2) {
      for (auto a_in : ins) {
        for (auto a_out : outs)
          if (w.arcs[a_out].head != w.arcs[a_in].tail) pairs.emplace_back(a_in, a_out);
      }
      if (pairs.size() != 2) continue;
    } else {
      continue;
    }
    bool ok = true;
    for (auto [a1, a2] : pairs) {
      const Arc& first = w.arcs[a1];
      const Arc& second = w.arcs[a2];
      if (first.length + second.length > max_length ||
          live.count({first.tail, second.head}) > 0)
        ok = false;
    }
    if (!ok) continue;
    for (auto [a1, a2] : pairs) {
      live.erase(live.find({w.arcs[a1].tail, w.arcs[a1].head}));
      live.erase(live.find({w.arcs[a2].tail, w.arcs[a2].head}));
      w.arcs[a1] = merge(w.arcs[a1], w.arcs[a2]);
      w.arc_alive[a2] = false;
      live.emplace(w.arcs[a1].tail, w.arcs[a1].head);
    }
    w.node_alive[m] = false;
    touched[m] = touched[static_cast<std::size_t>(u)] = touched[static_cast<std::size_t>(v)] = true;
    changed = true;
  }
  return changed;
}

bool demote_pass(Work& w, double radius) {
  std::vector<std::vector<std::pair<std::size_t, double>>> nbr(w.n());
  for (std::size_t a = 0; a < w.arcs.size(); ++a) {
    if (!w.arc_alive[a]) continue;
    const auto t = static_cast<std::size_t>(w.arcs[a].tail);
    const auto h = static_cast<std::size_t>(w.arcs[a].head);
    nbr[t].emplace_back(h, w.arcs[a].length);
    nbr[h].emplace_back(t, w.arcs[a].length);
  }
  bool changed = false;
  std::vector<double> dist(w.n());
  for (std::size_t c = 0; c < w.n(); ++c) {
    if (!w.node_alive[c] || w.nodes[c].kind != NodeKind::intersection_control) continue;
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[c] = 0.0;
    heap.emplace(0.0, c);
    bool near_other = false;
    while (!heap.empty() && !near_other) {
      const auto [du, u] = heap.top();
      heap.pop();
      if (du > dist[u]) continue;
      if (u != c && w.nodes[u].kind == NodeKind::intersection_control) near_other = true;
      for (auto [v, len] : nbr[u]) {
        const double cand = du + len;
        if (cand <= radius && cand < dist[v]) {
          dist[v] = cand;
          heap.emplace(cand, v);
        }
      }
    }
    if (near_other) {
      w.nodes[c].kind = NodeKind::plain;
      changed = true;
    }
  }
  return changed;
}

bool split_pass(Work& w, double max_length) {
  bool changed = false;
  const std::size_t count = w.arcs.size();
  std::vector<bool> done(count, false);
  std::map<std::pair<NodeId, NodeId>, std::vector<std::size_t>> by_pair;
  for (std::size_t a = 0; a < count; ++a)
    if (w.arc_alive[a]) by_pair[{w.arcs[a].tail, w.arcs[a].head}].push_back(a);
  for (std::size_t a = 0; a < count; ++a) {
    if (!w.arc_alive[a] || done[a] || !(w.arcs[a].length > max_length)) continue;
    const Arc original = w.arcs[a];
    Node mid;
    const Node& x = w.nodes[static_cast<std::size_t>(original.tail)];
    const Node& y = w.nodes[static_cast<std::size_t>(original.head)];
    if (x.position && y.position)
      mid.position = Point{0.5 * (x.position->x + y.position->x), 0.5 * (x.position->y + y.position->y)};
    const auto mid_id = static_cast<NodeId>(w.nodes.size());
    w.nodes.push_back(mid);
    w.node_alive.push_back(true);

    auto split_one = [&](std::size_t arc_index) {
      Arc first = w.arcs[arc_index];
      Arc second = first;
      first.length *= 0.5;
      second.length = first.length;
      second.tail = mid_id;
      first.head = mid_id;
      w.arcs[arc_index] = first;
      w.arcs.push_back(second);
      w.arc_alive.push_back(true);
      done[arc_index] = true;
    };
    split_one(a);
    // The reverse direction shares the midpoint.
    auto it = by_pair.find({original.head, original.tail});
    if (it != by_pair.end()) {
      for (auto r : it->second) {
        if (!done[r] && w.arc_alive[r] && w.arcs[r].length == original.length) {
          split_one(r);
          break;
        }
      }
    }
    changed = true;
  }
  return changed;
}

// Keeps the largest weakly connected component (ties: lowest node id).
bool keep_largest_component(Work& w) {
  const std::size_t n = w.n();
  std::vector<std::size_t> parent(n);
  for (std::size_t v = 0; v < n; ++v) parent[v] = v;
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (std::size_t a = 0; a < w.arcs.size(); ++a) {
    if (!w.arc_alive[a]) continue;
    const auto x = find(static_cast<std::size_t>(w.arcs[a].tail));
    const auto y = find(static_cast<std::size_t>(w.arcs[a].head));
    if (x != y) parent[std::max(x, y)] = std::min(x, y);
  }
  // Roots are the smallest member of each component.
  std::vector<std::size_t> size(n, 0);
  for (std::size_t v = 0; v < n; ++v)
    if (w.node_alive[v]) ++size[find(v)];
  std::size_t best = n;
  for (std::size_t v = 0; v < n; ++v)
    if (size[v] > 0 && (best == n || size[v] > size[best])) best = v;
  bool changed = false;
  for (std::size_t v = 0; v < n; ++v) {
    if (w.node_alive[v] && find(v) != best) {
      w.node_alive[v] = false;
      changed = true;
    }
  }
  for (std::size_t a = 0; a < w.arcs.size(); ++a) {
    if (w.arc_alive[a] && !w.node_alive[static_cast<std::size_t>(w.arcs[a].tail)]) {
      w.arc_alive[a] = false;
      changed = true;
    }
  }
  return changed;
}

}  // namespace

Network simplify_network(const Network& network, const SimplifyOptions& opts) {
  Work w(network);
  while (true) {
    bool changed = demote_pass(w, opts.control_radius);
    while (bypass_pass(w, opts.bypass_max_length)) changed = true;
    while (split_pass(w, opts.split_above_length)) changed = true;
    if (keep_largest_component(w)) changed = true;
    if (!changed) break;
  }
  std::vector<NodeId> remap(w.n(), -1);
  std::vector<Node> nodes;
  for (std::size_t v = 0; v < w.n(); ++v) {
    if (!w.node_alive[v]) continue;
    remap[v] = static_cast<NodeId>(nodes.size());
    nodes.push_back(w.nodes[v]);
  }
  std::vector<Arc> arcs;
  for (std::size_t a = 0; a < w.arcs.size(); ++a) {
    if (!w.arc_alive[a]) continue;
    Arc arc = w.arcs[a];
    arc.tail = remap[static_cast<std::size_t>(arc.tail)];
    arc.head = remap[static_cast<std::size_t>(arc.head)];
    arcs.push_back(arc);
  }
  return build_network(std::move(nodes), std::move(arcs),
                       NetworkOptions{network.has_parallel_arcs()});
}

}  // namespace rlmix
