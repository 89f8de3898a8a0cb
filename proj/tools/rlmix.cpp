#include "rlmix/estimator.hpp"
#include "rlmix/network_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef RLMIX_VERSION
#define RLMIX_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace rlmix;

namespace {

const char* kFeatureNames[kNumFeatures] = {"travel_time_non_residential", "travel_time_residential",
                                           "intersection", "left_turn", "u_turn"};

struct Common {
  std::string network;
  std::string out = ".";
  std::uint64_t seed = 1;
  int threads = default_thread_count();
};

std::vector<std::string> g_argv;

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

void write_manifest(const fs::path& dir, const std::string& command, json config, json outputs) {
  json m;
  m["tool"] = "rlmix";
  m["version"] = RLMIX_VERSION;
  m["command"] = command;
  m["argv"] = g_argv;
  m["config"] = std::move(config);
  m["outputs"] = std::move(outputs);
  auto os = open_out(dir / "manifest.json");
  os << m.dump(2) << "\n";
}

void save_weights(const fs::path& path, const Weights& b) {
  auto os = open_out(path);
  os << "feature,weight\n";
  for (int k = 0; k < kNumFeatures; ++k) os << kFeatureNames[k] << "," << format_double(b[k]) << "\n";
}

Weights load_weights(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "feature,weight") throw InvalidInput(path.string() + ": bad header");
  Weights b;
  for (int k = 0; k < kNumFeatures; ++k) {
    if (!std::getline(is, line)) throw InvalidInput(path.string() + ": expected 5 weights");
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.substr(0, comma) != kFeatureNames[k])
      throw InvalidInput(path.string() + ": expected feature " + kFeatureNames[k]);
    b[k] = parse_double(line.substr(comma + 1), "weight");
  }
  return b;
}

json weights_json(const Weights& b) {
  json j;
  for (int k = 0; k < kNumFeatures; ++k) j[kFeatureNames[k]] = b[k];
  return j;
}

json config_json(const EstimatorConfig& c) {
  return {{"eta", c.eta},
          {"lambda", c.lambda},
          {"gamma", c.gamma},
          {"samples", c.samples},
          {"batch_size", c.batch_size},
          {"stop_window", c.stop_window},
          {"stop_delta", c.stop_delta},
          {"max_iters", c.max_iters},
          {"seed", c.seed},
          {"estimator", to_string(c.estimator)},
          {"offline_refresh", c.offline_refresh},
          {"adam", {c.beta1, c.beta2, c.epsilon}},
          {"b0", weights_json(c.b0.b)}};
}

void write_trace(const fs::path& path, const std::vector<TraceRow>& trace) {
  auto os = open_out(path);
  os << "iteration,objective,smoothed,reference_rmsle,seconds\n";
  for (const TraceRow& r : trace) {
    os << r.iteration << "," << format_double(r.objective) << "," << format_double(r.smoothed) << ",";
    if (!std::isnan(r.reference_rmsle)) os << format_double(r.reference_rmsle);
    os << "," << format_double(r.seconds) << "\n";
  }
}

std::pair<Index, Index> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw CLI::ValidationError("--grid", "expected ROWSxCOLS");
  try {
    return {parse_index(text.substr(0, x), "rows"), parse_index(text.substr(x + 1), "cols")};
  } catch (const InvalidInput& e) {
    throw CLI::ValidationError("--grid", e.what());
  }
}

void add_common(CLI::App* app, Common& c, bool needs_network) {
  auto* net = app->add_option("--network", c.network, "network file");
  if (needs_network) net->required()->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory")->capture_default_str();
  app->add_option("--seed", c.seed, "master seed")->capture_default_str();
  app->add_option("--threads", c.threads, "worker threads (default $RLMIX_THREADS)")
      ->check(CLI::PositiveNumber);
}

void add_estimator_flags(CLI::App* app, EstimatorConfig& c, std::string& estimator) {
  app->add_option("--eta", c.eta, "step size")->capture_default_str();
  app->add_option("--lambda", c.lambda, "regularization weight")->capture_default_str();
  app->add_option("--gamma", c.gamma, "observation density sharpness")->capture_default_str()
      ->check(CLI::PositiveNumber);
  app->add_option("--samples", c.samples, "routes per path-free record (K)")->capture_default_str()
      ->check(CLI::PositiveNumber);
  app->add_option("--batch", c.batch_size, "mini-batch size, 0 = all")->capture_default_str();
  app->add_option("--max-iters", c.max_iters, "iteration cap")->capture_default_str();
  app->add_option("--stop-window", c.stop_window, "stopping window")->capture_default_str();
  app->add_option("--stop-delta", c.stop_delta, "required gain per window")->capture_default_str();
  app->add_option("--estimator", estimator, "online or offline")
      ->check(CLI::IsMember({"online", "offline"}))
      ->capture_default_str();
}

ObservationSet paths_mode(const ObservationSet& set, bool with_paths) {
  return with_paths ? set : strip_paths(set);
}

// --- subcommands -----------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::string grid = "10x10";
  Index od_draws = 6000;
  Index trips_per_od = 5;
  std::string noise = "underlying_normal";
  double mu = 0.1;
  double sigma = std::sqrt(0.1);
  std::string profile = "speed";
};

int run_generate(const GenerateArgs& a) {
  const auto [rows, cols] = parse_grid(a.grid);
  GridSpec gs;
  gs.rows = rows;
  gs.cols = cols;
  gs.profile = a.profile == "speed" ? GridProfile::speed : GridProfile::literal_seconds;
  const SyntheticGrid grid = synthetic_grid(gs);
  const TurnGraph graph(grid.network);

  SimulationSpec spec;
  spec.od_draws = a.od_draws;
  spec.trips_per_od = a.trips_per_od;
  spec.noise = a.noise == "moments"  ? NoiseModel::moments
               : a.noise == "none"   ? NoiseModel::none
                                     : NoiseModel::underlying_normal;
  spec.noise_mu = a.mu;
  spec.noise_sigma = a.sigma;
  spec.seed = a.common.seed;
  spec.threads = a.common.threads;
  const ObservationSet all = simulate_trips(graph, grid.true_times, spec);
  const SplitSets sets = split(all, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, derive_seed(a.common.seed, 9));

  const fs::path dir = a.common.out;
  fs::create_directories(dir);
  save_network(dir / "network.csv", grid.network);
  save_travel_times(dir / "t_true.csv", grid.network, grid.true_times);
  save_weights(dir / "b_true.csv", spec.b_true);
  save_observations(dir / "train.obs", sets.train);
  save_observations(dir / "val.obs", sets.validation);
  save_observations(dir / "test.obs", sets.test);

  json cfg = {{"grid", a.grid},
              {"profile", to_string(gs.profile)},
              {"od_draws", a.od_draws},
              {"trips_per_od", a.trips_per_od},
              {"noise", to_string(spec.noise)},
              {"noise_mu", a.mu},
              {"noise_sigma", a.sigma},
              {"seed", a.common.seed},
              {"b_true", weights_json(spec.b_true)}};
  write_manifest(dir, "generate", cfg,
                 {{"network", "network.csv"}, {"t_true", "t_true.csv"}, {"b_true", "b_true.csv"},
                  {"train", "train.obs"}, {"val", "val.obs"}, {"test", "test.obs"},
                  {"counts", {sets.train.size(), sets.validation.size(), sets.test.size()}}});
  std::cerr << "generated " << all.size() << " trips on " << grid.network.num_nodes() << " nodes, "
            << grid.network.num_arcs() << " arcs\n";
  return 0;
}

struct EstimateArgs {
  Common common;
  std::string obs;
  std::string reference;
  bool with_paths = true;
  std::string estimator = "online";
  EstimatorConfig config;
};

int run_estimate(EstimateArgs a) {
  const Network net = load_network(a.common.network);
  const TurnGraph graph(net);
  const ObservationSet data = paths_mode(load_observations(a.obs), a.with_paths);
  for (const Observation& o : data.observations) validate(o, net);
  a.config.seed = a.common.seed;
  a.config.threads = a.common.threads;
  a.config.estimator = a.estimator == "offline" ? EstimatorKind::offline : EstimatorKind::online;
  std::optional<Eigen::VectorXd> ref;
  if (!a.reference.empty()) ref = load_travel_times(a.reference, net);

  const FitResult r = fit(data, graph, travel_time_bounds(net), a.config, ref ? &*ref : nullptr);

  const fs::path dir = a.common.out;
  fs::create_directories(dir);
  save_weights(dir / "b_hat.csv", r.b);
  save_travel_times(dir / "t_hat.csv", net, r.T);
  write_trace(dir / "trace.csv", r.trace);
  json cfg = config_json(a.config);
  cfg["with_paths"] = a.with_paths;
  cfg["observations"] = a.obs;
  json out = {{"b_hat", "b_hat.csv"},
              {"t_hat", "t_hat.csv"},
              {"trace", "trace.csv"},
              {"iterations", r.diagnostics.iterations},
              {"best_iteration", r.diagnostics.best_iteration},
              {"stopped_early", r.diagnostics.stopped_early},
              {"trapped_walks", r.diagnostics.trapped_walks},
              {"clamped_values", r.diagnostics.clamped_values},
              {"negative_values", r.diagnostics.negative_values},
              {"factorizations", r.diagnostics.factorizations}};
  if (ref) out["rmsle_vs_reference"] = rmsle(r.T, *ref);
  write_manifest(dir, "estimate", cfg, out);
  std::cout << "b_hat";
  for (int k = 0; k < kNumFeatures; ++k) std::cout << " " << r.b[k];
  std::cout << "\n";
  if (ref) std::cout << "rmsle(T_hat, reference) " << rmsle(r.T, *ref) << "\n";
  return 0;
}

struct ModelArgs {
  Common common;
  std::string weights;
  std::string times;
  double gamma = 1.0;
  Index samples = 100;
};

void add_model_flags(CLI::App* app, ModelArgs& m) {
  add_common(app, m.common, true);
  app->add_option("--b", m.weights, "choice weights file")->required()->check(CLI::ExistingFile);
  app->add_option("--times", m.times, "arc travel time file")->required()->check(CLI::ExistingFile);
  app->add_option("--gamma", m.gamma, "observation density sharpness")->capture_default_str()
      ->check(CLI::PositiveNumber);
  app->add_option("--samples", m.samples, "routes per OD when not enumerable")->capture_default_str()
      ->check(CLI::PositiveNumber);
}

struct EvaluateArgs {
  ModelArgs model;
  std::string obs;
};

int run_evaluate(const EvaluateArgs& a) {
  const Network net = load_network(a.model.common.network);
  const TurnGraph graph(net);
  const ObservationSet data = load_observations(a.obs);
  const Weights b = load_weights(a.model.weights);
  const Eigen::VectorXd T = load_travel_times(a.model.times, net);
  ValueSolver solver(graph);
  const ModelState state = evaluate_model(solver, b, T, data.observations, data.od_distributions());
  const SmsleDensity density(a.model.gamma);
  PredictOptions opts;
  opts.samples = a.model.samples;
  const EvaluationReport rep = evaluate(data.observations, state, density, opts, a.model.common.seed,
                                        a.model.common.threads);

  const fs::path dir = a.model.common.out;
  fs::create_directories(dir);
  auto os = open_out(dir / "evaluation.csv");
  os << "o,d,observed,geomean,mean,mode,sq_log_error,exact\n";
  for (const EvaluationRecord& r : rep.records)
    os << r.o << "," << r.d << "," << format_double(r.observed) << "," << format_double(r.prediction.geomean)
       << "," << format_double(r.prediction.mean) << "," << format_double(r.prediction.mode) << ","
       << format_double(r.sq_log_error) << "," << (r.prediction.exact ? 1 : 0) << "\n";
  json summary = {{"records", rep.records.size()},
                  {"rmsle_geomean", rep.rmsle_geomean},
                  {"rmsle_mean", rep.rmsle_mean},
                  {"rmsle_mode", rep.rmsle_mode}};
  write_manifest(dir, "evaluate",
                 {{"observations", a.obs}, {"b", a.model.weights}, {"times", a.model.times},
                  {"gamma", a.model.gamma}, {"samples", a.model.samples}, {"seed", a.model.common.seed}},
                 {{"records", "evaluation.csv"}, {"summary", summary}});
  std::cout << "rmsle geomean " << rep.rmsle_geomean << " mean " << rep.rmsle_mean << " mode "
            << rep.rmsle_mode << " over " << rep.records.size() << " records\n";
  return 0;
}

struct PredictArgs {
  ModelArgs model;
  std::string od;
};

std::vector<std::pair<NodeId, NodeId>> load_od_list(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read " + path.string());
  std::vector<std::pair<NodeId, NodeId>> out;
  std::string line;
  Index n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty() || line == "o,d") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw InvalidInput("line " + std::to_string(n) + ": expected o,d");
    out.emplace_back(parse_index(line.substr(0, comma), "o"), parse_index(line.substr(comma + 1), "d"));
  }
  return out;
}

int run_predict(const PredictArgs& a) {
  const Network net = load_network(a.model.common.network);
  const TurnGraph graph(net);
  const Weights b = load_weights(a.model.weights);
  const Eigen::VectorXd T = load_travel_times(a.model.times, net);
  const auto pairs = load_od_list(a.od);
  std::vector<Observation> stubs;
  for (const auto& [o, d] : pairs) {
    Observation obs;
    obs.o = o;
    obs.d = d;
    validate(obs, net);
    stubs.push_back(obs);
  }
  ValueSolver solver(graph);
  const ModelState state = evaluate_model(solver, b, T, stubs, ODDistributions(stubs));
  const SmsleDensity density(a.model.gamma);
  PredictOptions opts;
  opts.samples = a.model.samples;

  const fs::path dir = a.model.common.out;
  fs::create_directories(dir);
  auto os = open_out(dir / "predictions.csv");
  os << "o,d,geomean,mean,mode,exact\n";
  for (const auto& [o, d] : pairs) {
    Rng rng = make_rng(a.model.common.seed, static_cast<std::uint64_t>(o), static_cast<std::uint64_t>(d));
    const Prediction p = predict(state, density, o, d, opts, rng);
    os << o << "," << d << "," << format_double(p.geomean) << "," << format_double(p.mean) << ","
       << format_double(p.mode) << "," << (p.exact ? 1 : 0) << "\n";
  }
  write_manifest(dir, "predict",
                 {{"od", a.od}, {"b", a.model.weights}, {"times", a.model.times}, {"gamma", a.model.gamma},
                  {"samples", a.model.samples}, {"seed", a.model.common.seed}},
                 {{"predictions", "predictions.csv"}, {"pairs", pairs.size()}});
  return 0;
}

struct SearchArgs {
  Common common;
  std::string obs;
  std::string val;
  bool with_paths = true;
  std::string estimator = "online";
  Index budget = 10;
  EstimatorConfig config;
};

int run_search(SearchArgs a) {
  const Network net = load_network(a.common.network);
  const TurnGraph graph(net);
  const ObservationSet train = paths_mode(load_observations(a.obs), a.with_paths);
  const ObservationSet val = load_observations(a.val);
  a.config.seed = a.common.seed;
  a.config.threads = a.common.threads;
  a.config.estimator = a.estimator == "offline" ? EstimatorKind::offline : EstimatorKind::online;
  const SearchResult r = random_search({}, a.budget, train, val, graph, travel_time_bounds(net), a.config, true);

  const fs::path dir = a.common.out;
  fs::create_directories(dir);
  auto os = open_out(dir / "leaderboard.csv");
  os << "rank,eta,gamma,lambda,validation_rmsle,status\n";
  std::vector<std::size_t> order(r.leaderboard.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return r.leaderboard[x].validation_rmsle < r.leaderboard[y].validation_rmsle;
  });
  for (std::size_t k = 0; k < order.size(); ++k) {
    const SearchEntry& e = r.leaderboard[order[k]];
    os << k + 1 << "," << format_double(e.config.eta) << "," << format_double(e.config.gamma) << ","
       << format_double(e.config.lambda) << ","
       << (std::isfinite(e.validation_rmsle) ? format_double(e.validation_rmsle) : std::string("nan")) << ","
       << e.status << "\n";
  }
  json cfg = config_json(a.config);
  cfg["budget"] = a.budget;
  cfg["with_paths"] = a.with_paths;
  write_manifest(dir, "search", cfg,
                 {{"leaderboard", "leaderboard.csv"}, {"best", config_json(r.best)}, {"best_rmsle", r.best_rmsle}});
  std::cout << "best eta " << r.best.eta << " gamma " << r.best.gamma << " lambda " << r.best.lambda
            << " validation rmsle " << r.best_rmsle << "\n";
  return 0;
}

struct TwoArcArgs {
  std::string out = ".";
  Index iters = 10;
};

int run_two_arc(const TwoArcArgs& a) {
  const fs::path dir = a.out;
  fs::create_directories(dir);
  json out;
  for (auto variant : {AlternatingVariant::expected_time, AlternatingVariant::expected_loss}) {
    const std::string name = variant == AlternatingVariant::expected_time ? "expected_time" : "expected_loss";
    const AlternatingTrace tr = naive_alternating_fit(variant, a.iters);
    auto os = open_out(dir / ("two_arc_" + name + ".csv"));
    os << "iteration,x,p,expected_msle\n";
    for (std::size_t i = 0; i < tr.x.size(); ++i)
      os << i << "," << format_double(tr.x[i]) << "," << format_double(tr.p[i]) << ","
         << format_double(tr.loss[i]) << "\n";
    out[name] = {{"file", "two_arc_" + name + ".csv"}, {"final_x", tr.x.back()},
                 {"final_loss", tr.loss.back()}, {"diverged", tr.diverged}};
    std::cout << name << ": x " << tr.x.back() << " expected msle " << tr.loss.back()
              << (tr.diverged ? " (diverged)" : "") << "\n";
  }
  const auto [x, loss] = two_arc_joint_minimum();
  out["joint_minimum"] = {{"x", x}, {"expected_msle", loss}};
  std::cout << "joint minimum: x " << x << " expected msle " << loss << "\n";
  write_manifest(dir, "two-arc-demo", {{"iters", a.iters}}, out);
  return 0;
}

int dispatch(int argc, char** argv);

// Replays the argv recorded in a manifest, optionally into another directory.
int run_rerun(const std::string& manifest, const std::string& out) {
  std::ifstream is(manifest);
  if (!is) throw InvalidInput("cannot read " + manifest);
  const json m = json::parse(is);
  std::vector<std::string> args = m.at("argv").get<std::vector<std::string>>();
  if (args.size() < 2) throw InvalidInput("manifest has no command line");
  if (!out.empty()) {
    bool replaced = false;
    for (std::size_t i = 0; i + 1 < args.size(); ++i)
      if (args[i] == "--out") {
        args[i + 1] = out;
        replaced = true;
      }
    if (!replaced) {
      args.push_back("--out");
      args.push_back(out);
    }
  }
  std::vector<char*> ptrs;
  for (auto& s : args) ptrs.push_back(s.data());
  return dispatch(static_cast<int>(ptrs.size()), ptrs.data());
}

int dispatch(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"Joint travel time and route choice estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", RLMIX_VERSION);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "synthetic grid, true times and train/val/test trips");
  add_common(g, gen.common, false);
  g->add_option("--grid", gen.grid, "ROWSxCOLS")->capture_default_str();
  g->add_option("--od-draws", gen.od_draws, "OD pairs drawn (0 = every pair once)")->capture_default_str();
  g->add_option("--trips-per-od", gen.trips_per_od, "trips per drawn pair")->capture_default_str();
  g->add_option("--noise", gen.noise, "underlying_normal, moments or none")
      ->check(CLI::IsMember({"underlying_normal", "moments", "none"}))
      ->capture_default_str();
  g->add_option("--noise-mu", gen.mu)->capture_default_str();
  g->add_option("--noise-sigma", gen.sigma)->capture_default_str();
  g->add_option("--profile", gen.profile, "speed or literal_seconds")
      ->check(CLI::IsMember({"speed", "literal_seconds"}))
      ->capture_default_str();

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "fit choice weights and arc travel times");
  add_common(e, est.common, true);
  e->add_option("--obs", est.obs, "training observations")->required()->check(CLI::ExistingFile);
  e->add_option("--reference", est.reference, "true arc times, traced as RMSLE")->check(CLI::ExistingFile);
  e->add_flag("--with-paths,!--no-paths", est.with_paths, "use observed paths")->capture_default_str();
  add_estimator_flags(e, est.config, est.estimator);

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "RMSLE of travel time predictions on a set");
  add_model_flags(v, ev.model);
  v->add_option("--obs", ev.obs, "observations to predict")->required()->check(CLI::ExistingFile);

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "travel time predictions for an OD list");
  add_model_flags(p, pr.model);
  p->add_option("--od", pr.od, "CSV of o,d pairs")->required()->check(CLI::ExistingFile);

  SearchArgs se;
  auto* s = app.add_subcommand("search", "random search over eta, gamma and lambda");
  add_common(s, se.common, true);
  s->add_option("--obs", se.obs, "training observations")->required()->check(CLI::ExistingFile);
  s->add_option("--val", se.val, "validation observations")->required()->check(CLI::ExistingFile);
  s->add_option("--budget", se.budget, "number of candidates")->capture_default_str()
      ->check(CLI::PositiveNumber);
  s->add_flag("--with-paths,!--no-paths", se.with_paths, "use observed paths")->capture_default_str();
  add_estimator_flags(s, se.config, se.estimator);

  TwoArcArgs ta;
  auto* t = app.add_subcommand("two-arc-demo", "alternating-fit traces on the two-arc network");
  t->add_option("--out", ta.out, "output directory")->capture_default_str();
  t->add_option("--iters", ta.iters, "iterations per variant")->capture_default_str();

  std::string manifest, rerun_out;
  auto* r = app.add_subcommand("rerun", "repeat a run from its manifest.json");
  r->add_option("manifest", manifest)->required()->check(CLI::ExistingFile);
  r->add_option("--out", rerun_out, "write into this directory instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  if (*g) return run_generate(gen);
  if (*e) return run_estimate(est);
  if (*v) return run_evaluate(ev);
  if (*p) return run_predict(pr);
  if (*s) return run_search(se);
  if (*t) return run_two_arc(ta);
  return run_rerun(manifest, rerun_out);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const std::exception& err) {
    std::cerr << "rlmix: " << err.what() << "\n";
    return 1;
  }
}
