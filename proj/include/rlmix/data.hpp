#pragma once

#include "rlmix/mixture.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rlmix {

/// Observations plus a provenance manifest. Manifest entries are kept in
/// insertion order and written as '#key=value' comment lines.
struct ObservationSet {
  std::vector<Observation> observations;
  std::vector<std::pair<std::string, std::string>> manifest;

  std::size_t size() const { return observations.size(); }
  bool empty() const { return observations.empty(); }
  /// Replaces an existing key or appends a new one.
  void set_meta(const std::string& key, const std::string& value);
  std::optional<std::string> meta(const std::string& key) const;
  ODDistributions od_distributions() const { return ODDistributions(observations); }
};

inline constexpr const char* kObservationFormat = "rlmix-observations/1";

// One record per line, comma-separated key=value fields in this order:
//   o=<node>  d=<node>  t=<minutes>  r=<node>;<node>;...  w=<weight>
// Only o is mandatory; w is written when it differs from 1. Lines starting
// with '#' carry the manifest, the first of them being the format tag.
void write_observations(std::ostream& os, const ObservationSet& set);
ObservationSet read_observations(std::istream& is);
void save_observations(const std::filesystem::path& path, const ObservationSet& set);
ObservationSet load_observations(const std::filesystem::path& path);

/// Nearest node within `radius` meters (inclusive); ties go to the lowest id.
std::optional<NodeId> match_endpoints(const Point& p, const Network& network, double radius = 100.0);

struct FilterOptions {
  double min_minutes = 0.5;
  double max_minutes = 180.0;
  double min_speed = 1.0;      // m/s
  double max_speed = 22.352;   // m/s, 50 mph
};

/// Drops timed records whose duration or average speed over the shortest
/// path falls outside the limits. The path is shortest by length, or by
/// `reference` travel times when given. Counts go into the manifest.
ObservationSet filter_trips(const ObservationSet& set, const Network& network,
                            const Eigen::VectorXd* reference = nullptr, const FilterOptions& opts = {});

enum class NoiseModel {
  underlying_normal,  // multiplier exp(N(mu, sigma^2))
  moments,            // multiplier with mean mu and standard deviation sigma
  none
};

struct SimulationSpec {
  Weights b_true = default_synthetic_weights();
  Index trips_per_od = 5;
  Index od_draws = 0;  // OD pairs drawn uniformly with replacement; 0 = every ordered pair once
  NoiseModel noise = NoiseModel::underlying_normal;
  double noise_mu = 0.1;
  double noise_sigma = 0.31622776601683794;  // sqrt(0.1)
  std::uint64_t seed = 1;
  int threads = 1;
  Index max_steps = 0;

  /// Travel time -2 on both channels, left turn -2, u-turn -5, no
  /// intersection term.
  static Weights default_synthetic_weights() {
    Weights w;
    w << -2.0, -2.0, 0.0, -2.0, -5.0;
    return w;
  }
};

/// Full (o, d, path, time) records drawn from the route choice model at
/// (b_true, T_true). Each OD draw uses its own derived random stream.
ObservationSet simulate_trips(const TurnGraph& graph, const Eigen::VectorXd& true_times,
                              const SimulationSpec& spec);

/// Same records with paths removed.
ObservationSet strip_paths(const ObservationSet& set);

struct SplitSets {
  ObservationSet train, validation, test;
};

/// Seeded shuffle, then cuts at the rounded cumulative fractions.
SplitSets split(const ObservationSet& set, std::array<double, 3> fractions, std::uint64_t seed);

std::string to_string(NoiseModel noise);

}  // namespace rlmix
