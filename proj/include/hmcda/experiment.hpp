#pragma once

// Twin-experiment harness: configuration, truth and observation generation,
// multi-instance filter runs and per-window statistics.

#include "hmcda/filters.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <atomic>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace hmcda {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class FilterKind { sampling, enkf, mlef };

inline std::string_view to_string(FilterKind f) {
  switch (f) {
    case FilterKind::sampling: return "sampling";
    case FilterKind::enkf: return "enkf";
    case FilterKind::mlef: return "mlef";
  }
  return "sampling";
}

inline std::optional<FilterKind> parse_filter_kind(std::string_view s) {
  for (auto f : {FilterKind::sampling, FilterKind::enkf, FilterKind::mlef}) {
    if (s == to_string(f)) return f;
  }
  return std::nullopt;
}

/// Stream ids reserved for experiment-wide draws; instance i uses stream i.
inline constexpr std::uint64_t kObservationStream = 0xFFFF'FFFF'0000'0001ull;
inline constexpr std::uint64_t kBackgroundStream = 0xFFFF'FFFF'0000'0002ull;

struct ExperimentConfig {
  std::uint64_t seed = 2015;
  Index instances = 100;
  int workers = 1;
  double t_start = 0.0;
  double t_end = 10.0;
  double interval = 0.1;
  Index cycles = 0;  // 0: round((t_end - t_start) / interval)
  double background_noise = 0.08;
  Index ensemble_size = 30;
  FilterKind filter = FilterKind::sampling;

  Lorenz96Config model;
  double model_error_std = 0.0;

  ObservationKind obs_kind = ObservationKind::linear;
  std::vector<Index> obs_indices;  // zero-based; empty: strided
  Index obs_start = 0;
  Index obs_stride = 3;
  double exponent_factor = 0.2;
  double threshold = 0.5;
  double noise_level = 0.05;

  CovarianceSettings covariance;
  SamplingFilterSettings sampler;
  MlefSettings mlef;

  std::string output = "results.json";

  Index cycle_count() const {
    if (cycles > 0) return cycles;
    return static_cast<Index>(std::llround((t_end - t_start) / interval));
  }

  double time_at(Index k) const { return t_start + static_cast<double>(k) * interval; }

  ObservationOperator observation_operator() const {
    auto idx = obs_indices.empty() ? strided_indices(model.nvar, obs_start, obs_stride) : obs_indices;
    return ObservationOperator(obs_kind, std::move(idx), exponent_factor, threshold);
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!(interval > 0.0)) fail("experiment.interval must be > 0");
    if (!(t_end > t_start)) fail("experiment.t_end must exceed experiment.t_start");
    if (instances < 1) fail("experiment.instances must be >= 1");
    if (workers < 1) fail("experiment.workers must be >= 1");
    if (cycle_count() < 1) fail("experiment window holds no assimilation time");
    if (ensemble_size < 2) fail("experiment.ensemble_size must be >= 2");
    if (background_noise < 0.0) fail("experiment.background_noise must be >= 0");
    if (model_error_std < 0.0) fail("model.model_error_std must be >= 0");
    if (noise_level < 0.0) fail("observation.noise_level must be >= 0");
    if (covariance.gamma < 0.0 || covariance.gamma > 1.0) fail("covariance.gamma must lie in [0, 1]");
    if (!(covariance.length > 0.0)) fail("covariance.length must be > 0");
    if (mlef.max_iterations < 1) fail("mlef.max_iterations must be >= 1");
    try {
      model.validate();
      sampler.chain.validate();
      auto op = observation_operator();
      if (op.indices().back() >= model.nvar) fail("observation index beyond model.nvar");
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }

  /// Canonical section.key -> value text of every resolved field.
  std::vector<std::pair<std::string, std::string>> resolved() const {
    auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    auto integer = [](long long v) { return std::to_string(v); };
    const auto op = observation_operator();
    std::string idx;
    for (Index i : op.indices()) idx += (idx.empty() ? "" : ",") + std::to_string(i + 1);
    const auto& c = sampler.chain;
    return {
        {"experiment.seed", std::to_string(seed)},
        {"experiment.instances", integer(instances)},
        {"experiment.workers", integer(workers)},
        {"experiment.t_start", num(t_start)},
        {"experiment.t_end", num(t_end)},
        {"experiment.interval", num(interval)},
        {"experiment.cycles", integer(cycle_count())},
        {"experiment.background_noise", num(background_noise)},
        {"experiment.ensemble_size", integer(ensemble_size)},
        {"experiment.filter", std::string(to_string(filter))},
        {"model.nvar", integer(model.nvar)},
        {"model.forcing", num(model.forcing)},
        {"model.dt", num(model.dt)},
        {"model.model_error_std", num(model_error_std)},
        {"observation.operator", std::string(to_string(obs_kind))},
        {"observation.indices", idx},
        {"observation.exponent_factor", num(exponent_factor)},
        {"observation.threshold", num(threshold)},
        {"observation.noise_level", num(noise_level)},
        {"covariance.gamma", num(covariance.gamma)},
        {"covariance.localize", covariance.localize ? "true" : "false"},
        {"covariance.length", num(covariance.length)},
        {"covariance.solver", std::string(to_string(covariance.solver))},
        {"sampler.integrator", std::string(to_string(c.trajectory.kind))},
        {"sampler.step", num(c.trajectory.step)},
        {"sampler.steps", integer(c.trajectory.steps)},
        {"sampler.jitter", num(c.trajectory.jitter)},
        {"sampler.burn_in", integer(c.burn_in)},
        {"sampler.thinning", integer(c.thinning)},
        {"sampler.mass", std::string(to_string(c.mass_policy))},
        {"sampler.mass_scale", num(c.mass_scale)},
        {"sampler.max_consecutive_rejections", integer(c.rejection_cap())},
        {"sampler.hilbert_energy", std::string(to_string(c.hilbert_energy))},
        {"sampler.chain_start", std::string(to_string(sampler.start))},
        {"mlef.max_iterations", integer(mlef.max_iterations)},
        {"mlef.gradient_tolerance", num(mlef.gradient_tolerance)},
        {"output.records", output},
    };
  }

  /// Sectioned key/value text that parse_experiment_config reads back.
  std::string to_ini() const {
    std::ostringstream out;
    std::string section;
    for (const auto& [key, value] : resolved()) {
      const auto dot = key.find('.');
      const std::string sec = key.substr(0, dot);
      if (sec != section) {
        out << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
        section = sec;
      }
      out << key.substr(dot + 1) << " = " << value << '\n';
    }
    return out.str();
  }

  /// 64-bit FNV-1a of the canonical resolved configuration, as 16 hex digits.
  /// Worker count and output path do not change results and are left out.
  std::string fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [key, value] : resolved()) {
      if (key == "experiment.workers" || key == "output.records") continue;
      for (unsigned char ch : key + '=' + value + '\n') {
        h ^= ch;
        h *= 0x100000001b3ull;
      }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

// -----------------------------------------------------------------------------
// Config parsing

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + text + "'");
}

template <class Parse>
auto parse_enum(const std::string& key, const std::string& text, Parse parse) {
  auto v = parse(text);
  if (!v) throw ConfigError(key + ": unknown value '" + text + "'");
  return *v;
}

}  // namespace detail

/// Reads the sectioned key/value format; unknown keys are errors.
inline ExperimentConfig parse_experiment_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }

  ExperimentConfig cfg;
  auto& chain = cfg.sampler.chain;
  using detail::parse_bool;
  using detail::parse_enum;
  using detail::parse_number;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"experiment.seed", [&](auto& k, auto& v) { cfg.seed = parse_number<std::uint64_t>(k, v); }},
      {"experiment.instances", [&](auto& k, auto& v) { cfg.instances = parse_number<Index>(k, v); }},
      {"experiment.workers", [&](auto& k, auto& v) { cfg.workers = parse_number<int>(k, v); }},
      {"experiment.t_start", [&](auto& k, auto& v) { cfg.t_start = parse_number<double>(k, v); }},
      {"experiment.t_end", [&](auto& k, auto& v) { cfg.t_end = parse_number<double>(k, v); }},
      {"experiment.interval", [&](auto& k, auto& v) { cfg.interval = parse_number<double>(k, v); }},
      {"experiment.cycles", [&](auto& k, auto& v) { cfg.cycles = parse_number<Index>(k, v); }},
      {"experiment.background_noise",
       [&](auto& k, auto& v) { cfg.background_noise = parse_number<double>(k, v); }},
      {"experiment.ensemble_size",
       [&](auto& k, auto& v) { cfg.ensemble_size = parse_number<Index>(k, v); }},
      {"experiment.filter",
       [&](auto& k, auto& v) { cfg.filter = parse_enum(k, v, parse_filter_kind); }},
      {"model.nvar", [&](auto& k, auto& v) { cfg.model.nvar = parse_number<Index>(k, v); }},
      {"model.forcing", [&](auto& k, auto& v) { cfg.model.forcing = parse_number<double>(k, v); }},
      {"model.dt", [&](auto& k, auto& v) { cfg.model.dt = parse_number<double>(k, v); }},
      {"model.model_error_std",
       [&](auto& k, auto& v) { cfg.model_error_std = parse_number<double>(k, v); }},
      {"observation.operator",
       [&](auto& k, auto& v) { cfg.obs_kind = parse_enum(k, v, parse_observation_kind); }},
      {"observation.start",
       [&](auto& k, auto& v) { cfg.obs_start = parse_number<Index>(k, v) - 1; }},
      {"observation.stride", [&](auto& k, auto& v) { cfg.obs_stride = parse_number<Index>(k, v); }},
      {"observation.indices",
       [&](auto& k, auto& v) {
         cfg.obs_indices.clear();
         std::stringstream ss(v);
         std::string tok;
         while (std::getline(ss, tok, ',')) {
           tok = detail::trim(tok);
           if (!tok.empty()) cfg.obs_indices.push_back(parse_number<Index>(k, tok) - 1);
         }
       }},
      {"observation.exponent_factor",
       [&](auto& k, auto& v) { cfg.exponent_factor = parse_number<double>(k, v); }},
      {"observation.threshold", [&](auto& k, auto& v) { cfg.threshold = parse_number<double>(k, v); }},
      {"observation.noise_level",
       [&](auto& k, auto& v) { cfg.noise_level = parse_number<double>(k, v); }},
      {"covariance.gamma",
       [&](auto& k, auto& v) { cfg.covariance.gamma = parse_number<double>(k, v); }},
      {"covariance.localize",
       [&](auto& k, auto& v) { cfg.covariance.localize = parse_bool(k, v); }},
      {"covariance.length",
       [&](auto& k, auto& v) { cfg.covariance.length = parse_number<double>(k, v); }},
      {"covariance.solver",
       [&](auto& k, auto& v) { cfg.covariance.solver = parse_enum(k, v, parse_covariance_solver); }},
      {"sampler.integrator",
       [&](auto& k, auto& v) { chain.trajectory.kind = parse_enum(k, v, parse_integrator_kind); }},
      {"sampler.step", [&](auto& k, auto& v) { chain.trajectory.step = parse_number<double>(k, v); }},
      {"sampler.steps", [&](auto& k, auto& v) { chain.trajectory.steps = parse_number<Index>(k, v); }},
      {"sampler.jitter",
       [&](auto& k, auto& v) { chain.trajectory.jitter = parse_number<double>(k, v); }},
      {"sampler.burn_in", [&](auto& k, auto& v) { chain.burn_in = parse_number<Index>(k, v); }},
      {"sampler.thinning", [&](auto& k, auto& v) { chain.thinning = parse_number<Index>(k, v); }},
      {"sampler.mass",
       [&](auto& k, auto& v) { chain.mass_policy = parse_enum(k, v, parse_mass_policy); }},
      {"sampler.mass_scale", [&](auto& k, auto& v) { chain.mass_scale = parse_number<double>(k, v); }},
      {"sampler.max_consecutive_rejections",
       [&](auto& k, auto& v) { chain.max_consecutive_rejections = parse_number<Index>(k, v); }},
      {"sampler.hilbert_energy",
       [&](auto& k, auto& v) { chain.hilbert_energy = parse_enum(k, v, parse_hilbert_energy_form); }},
      {"sampler.chain_start",
       [&](auto& k, auto& v) { cfg.sampler.start = parse_enum(k, v, parse_chain_start); }},
      {"mlef.max_iterations",
       [&](auto& k, auto& v) { cfg.mlef.max_iterations = parse_number<int>(k, v); }},
      {"mlef.gradient_tolerance",
       [&](auto& k, auto& v) { cfg.mlef.gradient_tolerance = parse_number<double>(k, v); }},
      {"output.records", [&](auto&, auto& v) { cfg.output = v; }},
  };

  // Explicit indices win over start/stride regardless of key order.
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      const auto it = setters.find(full);
      if (it == setters.end()) throw ConfigError("config: unknown key '" + full + "'");
      it->second(full, detail::trim(node.data()));
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  std::istringstream in(text);
  return parse_experiment_config(in);
}

// -----------------------------------------------------------------------------
// Records

struct ResultRecord {
  Index instance = 0;
  std::vector<double> times;
  std::vector<double> rmse;
  std::vector<double> acceptance_rate;  // per time; NaN where no chain ran
  Index proposals = 0;
  Index acceptances = 0;
  Index gradient_evaluations = 0;
  Index nonconverged_cycles = 0;
  bool diverged = false;
  double divergence_time = std::numeric_limits<double>::quiet_NaN();
  std::string divergence_message;

  double overall_acceptance_rate() const {
    return proposals == 0 ? std::numeric_limits<double>::quiet_NaN()
                          : static_cast<double>(acceptances) / static_cast<double>(proposals);
  }
};

struct RecordSet {
  std::string config_fingerprint;
  std::vector<ResultRecord> instances;
};

namespace detail {
inline bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }
inline bool same(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same(a[i], b[i])) return false;
  return true;
}
}  // namespace detail

/// Equality with NaN == NaN.
inline bool operator==(const ResultRecord& a, const ResultRecord& b) {
  return a.instance == b.instance && detail::same(a.times, b.times) && detail::same(a.rmse, b.rmse) &&
         detail::same(a.acceptance_rate, b.acceptance_rate) && a.proposals == b.proposals &&
         a.acceptances == b.acceptances && a.gradient_evaluations == b.gradient_evaluations &&
         a.nonconverged_cycles == b.nonconverged_cycles && a.diverged == b.diverged &&
         detail::same(a.divergence_time, b.divergence_time) &&
         a.divergence_message == b.divergence_message;
}

inline bool operator==(const RecordSet& a, const RecordSet& b) {
  return a.config_fingerprint == b.config_fingerprint && a.instances == b.instances;
}

// -----------------------------------------------------------------------------
// Twin experiment

/// Shared ingredients of every instance: truth, observations, B0 and the
/// initial ensemble.
struct TwinSetup {
  std::vector<double> times;
  std::vector<StateVector> truth;         // at times[0..K]
  std::vector<StateVector> observations;  // at times[1..K]
  ObservationErrorModel errors;
  StateVector b0_variances;
  StateVector background;
  Ensemble initial_ensemble;
};

inline TwinSetup make_twin_setup(const ExperimentConfig& cfg) {
  cfg.validate();
  TwinSetup s;
  const Index k_max = cfg.cycle_count();
  s.truth.reserve(static_cast<std::size_t>(k_max + 1));
  s.times.push_back(cfg.time_at(0));
  s.truth.push_back(reference_initial_condition(cfg.model));
  for (Index k = 1; k <= k_max; ++k) {
    s.times.push_back(cfg.time_at(k));
    s.truth.push_back(propagate(s.truth.back(), cfg.time_at(k - 1), cfg.time_at(k), cfg.model));
  }

  const auto op = cfg.observation_operator();
  RandomSource obs_rng(cfg.seed, kObservationStream);
  auto obs = synthesize_observations(std::span<const StateVector>(s.truth).subspan(1), op,
                                     cfg.noise_level, obs_rng);
  s.observations = std::move(obs.values);
  s.errors = std::move(obs.errors);

  const double sd0 = cfg.background_noise * s.truth.front().cwiseAbs().mean();
  s.b0_variances = StateVector::Constant(cfg.model.nvar, sd0 * sd0);
  const StateVector sd = StateVector::Constant(cfg.model.nvar, sd0);
  RandomSource bg_rng(cfg.seed, kBackgroundStream);
  s.background = gaussian_vector(bg_rng, s.truth.front(), sd);
  s.initial_ensemble = Ensemble(cfg.model.nvar, cfg.ensemble_size);
  for (Index e = 0; e < cfg.ensemble_size; ++e) {
    s.initial_ensemble.member(e) = gaussian_vector(bg_rng, s.background, sd);
  }
  return s;
}

/// Runs one filter instance on its own random stream. Divergence is recorded,
/// never thrown.
inline ResultRecord run_instance(const ExperimentConfig& cfg, const TwinSetup& setup, Index instance) {
  const auto op = cfg.observation_operator();
  const Index k_max = static_cast<Index>(setup.times.size()) - 1;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  ResultRecord rec;
  rec.instance = instance;
  rec.times = setup.times;
  rec.rmse.assign(setup.times.size(), nan);
  rec.acceptance_rate.assign(setup.times.size(), nan);

  RandomSource rng(cfg.seed, static_cast<std::uint64_t>(instance));
  CycleContext ctx;
  ctx.model = cfg.model;
  ctx.op = &op;
  ctx.errors = setup.errors;
  ctx.b0_variances = setup.b0_variances;
  ctx.covariance = cfg.covariance;
  if (cfg.model_error_std > 0.0) {
    ctx.model_error_std = StateVector::Constant(cfg.model.nvar, cfg.model_error_std);
  }

  // The chain yields exactly one analysis member per ensemble slot.
  SamplingFilterSettings sampler = cfg.sampler;
  sampler.chain.samples = cfg.ensemble_size;

  Ensemble ensemble = setup.initial_ensemble;
  MlefState mlef = MlefState::from_ensemble(setup.initial_ensemble);
  rec.rmse[0] = rmse(cfg.filter == FilterKind::mlef ? mlef.optimum : ensemble.mean(), setup.truth[0]);

  Index k = 1;
  try {
    for (; k <= k_max; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      ctx.t0 = setup.times[uk - 1];
      ctx.t1 = setup.times[uk];
      ctx.observation = setup.observations[uk - 1];
      StateVector estimate;
      switch (cfg.filter) {
        case FilterKind::sampling: {
          auto res = sampling_filter_cycle(ensemble, ctx, sampler, rng);
          rec.proposals += res.diagnostics.proposals;
          rec.acceptances += res.diagnostics.acceptances;
          rec.gradient_evaluations += res.diagnostics.gradient_evaluations;
          rec.acceptance_rate[uk] = res.diagnostics.acceptance_rate();
          ensemble = std::move(res.analysis);
          estimate = std::move(res.mean);
          break;
        }
        case FilterKind::enkf: {
          auto res = enkf_cycle(ensemble, ctx, rng);
          ensemble = std::move(res.analysis);
          estimate = std::move(res.mean);
          break;
        }
        case FilterKind::mlef: {
          auto res = mlef_cycle(mlef, ctx, cfg.mlef);
          if (!res.converged) ++rec.nonconverged_cycles;
          mlef = std::move(res.state);
          estimate = mlef.optimum;
          break;
        }
      }
      if (!estimate.allFinite()) throw Error("non-finite analysis state");
      rec.rmse[uk] = rmse(estimate, setup.truth[uk]);
    }
  } catch (const CycleDivergenceError& e) {
    rec.proposals += e.diagnostics().proposals;
    rec.acceptances += e.diagnostics().acceptances;
    rec.gradient_evaluations += e.diagnostics().gradient_evaluations;
    rec.diverged = true;
    rec.divergence_message = e.what();
  } catch (const Error& e) {
    rec.diverged = true;
    rec.divergence_message = e.what();
  }
  if (rec.diverged) rec.divergence_time = setup.times[static_cast<std::size_t>(std::min(k, k_max))];
  return rec;
}

/// All instances, `cfg.workers` at a time; records are ordered by instance id.
inline RecordSet run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(const ResultRecord&)>& on_done = {}) {
  const TwinSetup setup = make_twin_setup(cfg);
  RecordSet out;
  out.config_fingerprint = cfg.fingerprint();
  out.instances.resize(static_cast<std::size_t>(cfg.instances));

  std::atomic<Index> next{0};
  std::mutex report;
  auto worker = [&] {
    for (Index i = next++; i < cfg.instances; i = next++) {
      out.instances[static_cast<std::size_t>(i)] = run_instance(cfg, setup, i);
      if (on_done) {
        std::lock_guard lock(report);
        on_done(out.instances[static_cast<std::size_t>(i)]);
      }
    }
  };
  const int n_workers = static_cast<int>(std::min<Index>(cfg.workers, cfg.instances));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  return out;
}

// -----------------------------------------------------------------------------
// Statistics

struct TimeWindow {
  double start = 8.0;
  double end = 10.0;

  bool contains(double t) const {
    const double eps = 1e-9 * std::max(1.0, std::abs(end));
    return t >= start - eps && t <= end + eps;
  }
};

/// Parses "a:b".
inline TimeWindow parse_window(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("window: expected start:end, got '" + text + "'");
  TimeWindow w{detail::parse_number<double>("window", detail::trim(text.substr(0, colon))),
               detail::parse_number<double>("window", detail::trim(text.substr(colon + 1)))};
  if (w.end < w.start) throw ConfigError("window: end precedes start");
  return w;
}

struct StatisticsTable {
  RunStatistics stats;
  TimeWindow window;
  Index instances_total = 0;
  Index instances_diverged = 0;
  double mean_acceptance_rate = std::numeric_limits<double>::quiet_NaN();

  double divergence_rate() const {
    return instances_total == 0 ? 0.0
                                : static_cast<double>(instances_diverged) /
                                      static_cast<double>(instances_total);
  }
};

/// Min/Max/Mean/Std over (non-diverged instance, time in window) pairs.
inline StatisticsTable tabulate(const RecordSet& records, TimeWindow window) {
  StatisticsTable t;
  t.window = window;
  t.instances_total = static_cast<Index>(records.instances.size());
  std::vector<double> values;
  double acc_sum = 0.0;
  Index acc_n = 0;
  for (const auto& rec : records.instances) {
    if (rec.diverged) {
      ++t.instances_diverged;
      continue;
    }
    for (std::size_t k = 0; k < rec.times.size() && k < rec.rmse.size(); ++k) {
      if (window.contains(rec.times[k]) && std::isfinite(rec.rmse[k])) values.push_back(rec.rmse[k]);
    }
    if (std::isfinite(rec.overall_acceptance_rate())) {
      acc_sum += rec.overall_acceptance_rate();
      ++acc_n;
    }
  }
  if (values.empty()) throw EmptyInputError("tabulate: no RMSE values inside the window");
  t.stats = summarize(values);
  if (acc_n > 0) t.mean_acceptance_rate = acc_sum / static_cast<double>(acc_n);
  return t;
}

inline std::string format_table(const StatisticsTable& t) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "RMSE statistics for %g <= t <= %g\n", t.window.start, t.window.end);
  out << buf;
  const std::pair<const char*, double> rows[] = {
      {"Min", t.stats.min},
      {"Max", t.stats.max},
      {"Mean", t.stats.mean},
      {"Std", t.stats.std},
      {"Mean+2Std", t.stats.mean_plus_2std()},
      {"Mean-2Std", t.stats.mean_minus_2std()},
  };
  for (const auto& [name, value] : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %12.6f\n", name, value);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-10s %12zu\n", "Samples", t.stats.count);
  out << buf;
  std::snprintf(buf, sizeof buf, "Diverged   %lld / %lld (rate %.3f)\n",
                static_cast<long long>(t.instances_diverged), static_cast<long long>(t.instances_total),
                t.divergence_rate());
  out << buf;
  if (std::isfinite(t.mean_acceptance_rate)) {
    std::snprintf(buf, sizeof buf, "Acceptance %12.6f\n", t.mean_acceptance_rate);
    out << buf;
  }
  return out.str();
}

}  // namespace hmcda
