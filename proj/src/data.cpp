#include "rlmix/data.hpp"

#include "rlmix/network_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace rlmix {

void ObservationSet::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : manifest)
    if (k == key) {
      v = value;
      return;
    }
  manifest.emplace_back(key, value);
}

std::optional<std::string> ObservationSet::meta(const std::string& key) const {
  for (const auto& [k, v] : manifest)
    if (k == key) return v;
  return std::nullopt;
}

void write_observations(std::ostream& os, const ObservationSet& set) {
  os << "#format=" << kObservationFormat << '\n';
  for (const auto& [k, v] : set.manifest)
    if (k != "format") os << '#' << k << '=' << v << '\n';
  for (const Observation& obs : set.observations) {
    os << "o=" << obs.o;
    if (obs.d) os << ",d=" << *obs.d;
    if (obs.t) os << ",t=" << format_double(*obs.t);
    if (obs.has_path()) {
      os << ",r=";
      for (std::size_t i = 0; i < obs.path.size(); ++i) os << (i ? ";" : "") << obs.path[i];
    }
    if (obs.weight != 1.0) os << ",w=" << format_double(obs.weight);
    os << '\n';
  }
}

namespace {

Observation parse_record(std::string_view line) {
  Observation obs;
  bool seen[5] = {false, false, false, false, false};
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t end = line.find(',', start);
    if (end == std::string_view::npos) end = line.size();
    const std::string_view field = line.substr(start, end - start);
    const std::size_t eq = field.find('=');
    if (eq == std::string_view::npos) throw InvalidInput("field '" + std::string(field) + "' is not key=value");
    const std::string_view key = field.substr(0, eq), value = field.substr(eq + 1);
    static constexpr std::string_view keys[] = {"o", "d", "t", "r", "w"};
    const auto k = static_cast<std::size_t>(std::find(std::begin(keys), std::end(keys), key) - std::begin(keys));
    if (k == 5) throw InvalidInput("unknown field '" + std::string(key) + "'");
    if (seen[k]) throw InvalidInput("repeated field '" + std::string(key) + "'");
    seen[k] = true;
    switch (k) {
      case 0: obs.o = parse_index(value, "origin"); break;
      case 1: obs.d = parse_index(value, "destination"); break;
      case 2:
        obs.t = parse_double(value, "time");
        if (!(*obs.t > 0.0) || !std::isfinite(*obs.t)) throw InvalidInput("travel time must be positive");
        break;
      case 3: {
        std::size_t s = 0;
        while (s <= value.size()) {
          std::size_t e = value.find(';', s);
          if (e == std::string_view::npos) e = value.size();
          obs.path.push_back(parse_index(value.substr(s, e - s), "path node"));
          s = e + 1;
        }
        break;
      }
      case 4:
        obs.weight = parse_double(value, "weight");
        if (!(obs.weight > 0.0) || !std::isfinite(obs.weight)) throw InvalidInput("weight must be positive");
        break;
    }
    start = end + 1;
  }
  if (!seen[0]) throw InvalidInput("record has no origin");
  if (obs.o < 0 || (obs.d && *obs.d < 0)) throw InvalidInput("negative node id");
  if (!obs.d && !obs.t && !obs.has_path()) throw InvalidInput("record needs a destination or a time");
  if (obs.has_path()) {
    if (obs.path.size() < 2) throw InvalidInput("path needs at least two nodes");
    if (obs.path.front() != obs.o) throw InvalidInput("path does not start at the origin");
    if (obs.d && obs.path.back() != *obs.d) throw InvalidInput("path does not end at the destination");
  }
  return obs;
}

}  // namespace

ObservationSet read_observations(std::istream& is) {
  ObservationSet set;
  std::string line;
  std::size_t line_no = 0;
  bool format_seen = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) continue;  // free comment
      const std::string key = line.substr(1, eq - 1), value = line.substr(eq + 1);
      if (key == "format") {
        if (value != kObservationFormat)
          throw InvalidInput("line " + std::to_string(line_no) + ": unsupported format '" + value + "'");
        format_seen = true;
        continue;
      }
      set.manifest.emplace_back(key, value);
      continue;
    }
    try {
      set.observations.push_back(parse_record(line));
    } catch (const InvalidInput& e) {
      throw InvalidInput("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  (void)format_seen;  // untagged files are accepted as the current format
  return set;
}

void save_observations(const std::filesystem::path& path, const ObservationSet& set) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_observations(os, set);
}

ObservationSet load_observations(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open " + path.string());
  return read_observations(is);
}

std::optional<NodeId> match_endpoints(const Point& p, const Network& network, double radius) {
  std::optional<NodeId> best;
  double best_d = radius;
  for (NodeId n = 0; n < network.num_nodes(); ++n) {
    const auto& pos = network.node(n).position;
    if (!pos) continue;
    const double d = std::hypot(pos->x - p.x, pos->y - p.y);
    if (d < best_d || (d == best_d && !best)) {
      best = n;
      best_d = d;
    }
  }
  return best;
}

ObservationSet filter_trips(const ObservationSet& set, const Network& network,
                            const Eigen::VectorXd* reference, const FilterOptions& opts) {
  const Eigen::VectorXd lengths = network.lengths();
  std::map<NodeId, Eigen::VectorXd> dist_to;          // by length
  std::map<std::pair<NodeId, NodeId>, double> dist_od;  // along the reference-fastest path
  auto distance = [&](NodeId o, NodeId d) {
    if (reference) {
      auto it = dist_od.find({o, d});
      if (it != dist_od.end()) return it->second;
      const ShortestPath sp = shortest_path(network, *reference, o, d);
      double len = 0.0;
      for (ArcId a : sp.arcs) len += lengths[a];
      return dist_od[{o, d}] = len;
    }
    auto it = dist_to.find(d);
    if (it == dist_to.end()) it = dist_to.emplace(d, times_to(network, lengths, d)).first;
    return it->second[o];
  };

  ObservationSet out;
  out.manifest = set.manifest;
  Index short_n = 0, long_n = 0, slow_n = 0, fast_n = 0, unreachable_n = 0;
  for (const Observation& obs : set.observations) {
    if (obs.t) {
      const double t = *obs.t;
      if (t < opts.min_minutes) { ++short_n; continue; }
      if (t > opts.max_minutes) { ++long_n; continue; }
      if (const auto d = obs.destination(); d && *d != obs.o) {
        double len = 0.0;
        try {
          len = distance(obs.o, *d);
        } catch (const InvalidInput&) {
          ++unreachable_n;
          continue;
        }
        if (!std::isfinite(len)) { ++unreachable_n; continue; }
        const double speed = len / (t * 60.0);
        if (speed < opts.min_speed) { ++slow_n; continue; }
        if (speed > opts.max_speed) { ++fast_n; continue; }
      }
    }
    out.observations.push_back(obs);
  }
  auto bump = [&](const std::string& key, Index n) {
    const auto prev = out.meta(key);
    out.set_meta(key, std::to_string((prev ? std::stoll(*prev) : 0) + n));
  };
  bump("filter.removed_short", short_n);
  bump("filter.removed_long", long_n);
  bump("filter.removed_slow", slow_n);
  bump("filter.removed_fast", fast_n);
  bump("filter.removed_unreachable", unreachable_n);
  out.set_meta("filter.kept", std::to_string(out.size()));
  return out;
}

std::string to_string(NoiseModel noise) {
  switch (noise) {
    case NoiseModel::underlying_normal: return "lognormal_underlying_normal";
    case NoiseModel::moments: return "lognormal_moments";
    case NoiseModel::none: return "none";
  }
  return "unknown";
}

ObservationSet simulate_trips(const TurnGraph& graph, const Eigen::VectorXd& true_times,
                              const SimulationSpec& spec) {
  if (spec.trips_per_od < 1) throw InvalidInput("trips_per_od must be at least 1");
  if (!spec.b_true.allFinite()) throw InvalidInput("b_true must be finite");
  double mu = spec.noise_mu, sigma = spec.noise_sigma;
  if (spec.noise == NoiseModel::moments) {
    if (!(mu > 0.0) || !(sigma >= 0.0)) throw InvalidInput("moment noise needs positive mean");
    const double s2 = std::log1p(sigma * sigma / (mu * mu));
    mu = std::log(mu) - 0.5 * s2;
    sigma = std::sqrt(s2);
  } else if (spec.noise == NoiseModel::none) {
    mu = 0.0;
    sigma = 0.0;
  }
  if (!(sigma >= 0.0)) throw InvalidInput("noise sigma must be nonnegative");

  const Network& net = graph.network();
  std::vector<std::pair<NodeId, NodeId>> pairs;
  {
    std::vector<std::vector<bool>> reach(static_cast<std::size_t>(net.num_nodes()));
    for (NodeId d = 0; d < net.num_nodes(); ++d) reach[static_cast<std::size_t>(d)] = graph.reaches(d);
    for (NodeId o = 0; o < net.num_nodes(); ++o)
      for (NodeId d = 0; d < net.num_nodes(); ++d)
        if (o != d && reach[static_cast<std::size_t>(d)][static_cast<std::size_t>(graph.origin_state(o))])
          pairs.emplace_back(o, d);
  }
  if (pairs.empty()) throw InvalidInput("network has no connected OD pair");
  std::vector<std::pair<NodeId, NodeId>> draws;
  if (spec.od_draws <= 0) {
    draws = pairs;
  } else {
    Rng rng = make_rng(spec.seed, 0);
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
    for (Index i = 0; i < spec.od_draws; ++i) draws.push_back(pairs[pick(rng)]);
  }
  std::set<NodeId> dest_set;
  for (const auto& p : draws) dest_set.insert(p.second);
  const std::vector<NodeId> dests(dest_set.begin(), dest_set.end());
  ValueSolver solver(graph);
  const ModelState state(solver.solve(spec.b_true, true_times, dests));

  const Index max_steps = spec.max_steps > 0 ? spec.max_steps : graph.default_max_steps();
  std::vector<std::vector<Observation>> per_draw(draws.size());
  std::vector<Index> trapped(draws.size(), 0);
  parallel_for(static_cast<Index>(draws.size()), spec.threads, [&](Index i) {
    const auto [o, d] = draws[static_cast<std::size_t>(i)];
    Rng rng = make_rng(spec.seed, 1, static_cast<std::uint64_t>(i));
    std::normal_distribution<double> noise(mu, sigma > 0.0 ? sigma : 1.0);
    for (Index j = 0; j < spec.trips_per_od; ++j) {
      std::vector<ArcId> route;
      try {
        route = sample_path(graph, state.table(d), o, rng, max_steps);
      } catch (const NumericalError&) {
        ++trapped[static_cast<std::size_t>(i)];
        continue;
      }
      const double mult = sigma > 0.0 ? std::exp(noise(rng)) : std::exp(mu);
      Observation obs;
      obs.o = o;
      obs.d = d;
      obs.t = route_time(true_times, route) * mult;
      obs.path = net.node_path_of_arcs(route);
      per_draw[static_cast<std::size_t>(i)].push_back(std::move(obs));
    }
  });

  ObservationSet set;
  for (auto& v : per_draw)
    for (auto& o : v) set.observations.push_back(std::move(o));
  std::ostringstream b;
  for (int k = 0; k < kNumFeatures; ++k) b << (k ? ";" : "") << format_double(spec.b_true[k]);
  set.set_meta("source", "simulate");
  set.set_meta("seed", std::to_string(spec.seed));
  set.set_meta("b_true", b.str());
  set.set_meta("trips_per_od", std::to_string(spec.trips_per_od));
  set.set_meta("od_draws", std::to_string(spec.od_draws));
  set.set_meta("noise", to_string(spec.noise));
  set.set_meta("noise_mu", format_double(spec.noise_mu));
  set.set_meta("noise_sigma", format_double(spec.noise_sigma));
  set.set_meta("trapped_walks", std::to_string(std::accumulate(trapped.begin(), trapped.end(), Index{0})));
  return set;
}

ObservationSet strip_paths(const ObservationSet& set) {
  ObservationSet out;
  out.manifest = set.manifest;
  for (const Observation& obs : set.observations) out.observations.push_back(obs.without_path());
  out.set_meta("paths", "stripped");
  return out;
}

SplitSets split(const ObservationSet& set, std::array<double, 3> fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw InvalidInput("split fractions must be nonnegative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("split fractions must sum to 1");
  const std::size_t n = set.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 2);
  // Fisher-Yates with our own index draws so the order does not depend on
  // the standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  const auto cut1 = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto cut2 = std::min(n, static_cast<std::size_t>(std::llround((fractions[0] + fractions[1]) * static_cast<double>(n))));
  SplitSets out;
  for (ObservationSet* s : {&out.train, &out.validation, &out.test}) {
    s->manifest = set.manifest;
    s->set_meta("split_seed", std::to_string(seed));
  }
  out.train.set_meta("split", "train");
  out.validation.set_meta("split", "validation");
  out.test.set_meta("split", "test");
  for (std::size_t i = 0; i < n; ++i) {
    ObservationSet& dst = i < cut1 ? out.train : (i < cut2 ? out.validation : out.test);
    dst.observations.push_back(set.observations[idx[i]]);
  }
  return out;
}

}  // namespace rlmix
