#include "aadkit/harness.hpp"

#include "aadkit/binary_io.hpp"
#include "aadkit/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

namespace aadkit::harness {

// ---------------------------------------------------------------- ingestion

namespace {

std::vector<Speaker> read_attention_csv(const std::filesystem::path& path, std::size_t samples) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string line;
  long long offset = 0;
  if (!std::getline(is, line) || line.rfind("sample,speaker", 0) != 0)
    throw FormatError("attention.csv: expected header 'sample,speaker'", 0);
  offset += static_cast<long long>(line.size()) + 1;
  std::vector<Speaker> out;
  out.reserve(samples);
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      offset += 1;
      continue;
    }
    const auto comma = line.find(',');
    std::size_t index = 0;
    int label = 0;
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      index = std::stoull(line.substr(0, comma));
      label = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw FormatError("attention.csv: malformed row '" + line + "'", offset);
    }
    if (index != out.size()) throw FormatError("attention.csv: sample indices must be consecutive", offset);
    if (label != 1 && label != 2) throw FormatError("attention.csv: speaker must be 1 or 2", offset);
    out.push_back(speaker_from_int(label));
    offset += static_cast<long long>(line.size()) + 1;
  }
  if (out.size() != samples)
    throw FormatError("attention.csv: expected " + std::to_string(samples) + " rows, found " +
                          std::to_string(out.size()),
                      offset);
  return out;
}

}  // namespace

Recording ingest_recording(const std::filesystem::path& dir, double expected_rate) {
  const auto header = io::read_json(dir / "scene.json");
  const std::string ctx = "scene.json";
  if (io::require<std::string>(header, "format", ctx) != "aadkit-scene")
    throw FormatError(ctx + ": not an aadkit scene header");
  const auto eeg_rate = io::require<double>(header, "eeg_rate", ctx);
  const auto env_rate = io::require<double>(header, "envelope_rate", ctx);
  const auto channels = io::require<std::size_t>(header, "channels", ctx);
  const auto samples = io::require<std::size_t>(header, "samples", ctx);
  if (expected_rate > 0.0 && (std::abs(eeg_rate - expected_rate) > 1e-9 || std::abs(env_rate - expected_rate) > 1e-9)) {
    std::ostringstream msg;
    msg << ctx << ": rate mismatch, header says eeg " << eeg_rate << " Hz / envelopes " << env_rate
        << " Hz but " << expected_rate << " Hz was expected";
    throw FormatError(msg.str());
  }
  if (!(eeg_rate > 0.0) || !(env_rate > 0.0)) throw FormatError(ctx + ": rates must be positive");
  if (channels < 1 || samples < 2) throw FormatError(ctx + ": invalid dimensions");

  Recording rec;
  rec.condition = header.value("condition_tag", dir.filename().string());
  const auto eeg = io::read_f64_le(dir / "eeg.bin", channels * samples, "eeg");
  rec.eeg.rate = eeg_rate;
  rec.eeg.data = Eigen::Map<const RowMatrix>(eeg.data(), static_cast<Eigen::Index>(channels),
                                             static_cast<Eigen::Index>(samples));
  const std::size_t env_samples =
      static_cast<std::size_t>(std::llround(static_cast<double>(samples) * env_rate / eeg_rate));
  const auto env = io::read_f64_le(dir / "envelopes.bin", 2 * env_samples, "envelopes");
  rec.e1 = {std::vector<double>(env.begin(), env.begin() + static_cast<std::ptrdiff_t>(env_samples)), env_rate};
  rec.e2 = {std::vector<double>(env.begin() + static_cast<std::ptrdiff_t>(env_samples), env.end()), env_rate};
  if (std::filesystem::exists(dir / "attention.csv"))
    rec.attention = read_attention_csv(dir / "attention.csv", env_samples);
  validate(rec.eeg, "eeg.bin");
  validate(rec.e1, "envelopes.bin");
  validate(rec.e2, "envelopes.bin");
  return rec;
}

Recording from_scene(const synth::Scene& scene) {
  return {scene.config.condition_tag, scene.eeg, scene.e1, scene.e2, scene.attention};
}

// ---------------------------------------------------------------- protocol

std::vector<Split> split_leave_one_condition_out(std::size_t condition_count) {
  if (condition_count < 2) throw ParameterError("leave-one-condition-out needs at least 2 conditions");
  std::vector<Split> splits(condition_count);
  for (std::size_t t = 0; t < condition_count; ++t) {
    splits[t].test = t;
    for (std::size_t i = 0; i < condition_count; ++i)
      if (i != t) splits[t].train.push_back(i);
  }
  return splits;
}

double decoding_performance(std::span<const Speaker> decisions, std::span<const Speaker> truth) {
  if (decisions.size() != truth.size()) throw ParameterError("decoding_performance: length mismatch");
  if (decisions.empty()) throw ParameterError("decoding_performance: no decisions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) hits += decisions[i] == truth[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(decisions.size());
}

std::vector<Speaker> window_labels(std::span<const Speaker> per_sample, const WindowSpec& spec, std::size_t count) {
  std::vector<Speaker> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t mid = k * spec.hop_samples + spec.length_samples / 2;
    if (mid >= per_sample.size()) throw LengthError("window_labels: labels shorter than the windows");
    out[k] = per_sample[mid];
  }
  return out;
}

std::string Method::name() const {
  std::string n = decoder == Decoder::LS ? "LS" : "NN";
  return ssm ? n + "-SSM" : n;
}

Method Method::parse(const std::string& name) {
  if (name == "LS") return {Decoder::LS, false};
  if (name == "NN") return {Decoder::NN, false};
  if (name == "LS-SSM") return {Decoder::LS, true};
  if (name == "NN-SSM") return {Decoder::NN, true};
  throw ParameterError("unknown method '" + name + "' (expected LS, NN, LS-SSM or NN-SSM)");
}

// ---------------------------------------------------------------- config

void ExperimentConfig::check() const {
  if (conditions.size() < 2) throw ParameterError("experiment: need at least 2 conditions");
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    const auto& c = conditions[i];
    if (c.tag.empty()) throw ParameterError("experiment: condition tags must be non-empty");
    if (c.scene_dir.has_value() == c.synth.has_value())
      throw ParameterError("experiment: condition '" + c.tag + "' needs exactly one of scene_dir or synth");
    if (c.scene_dir && !std::filesystem::exists(*c.scene_dir))
      throw ParameterError("experiment: scene directory " + c.scene_dir->string() + " does not exist");
    if (c.synth) c.synth->check();
    for (std::size_t j = 0; j < i; ++j)
      if (conditions[j].tag == c.tag) throw ParameterError("experiment: duplicate condition tag '" + c.tag + "'");
  }
  if (methods.empty()) throw ParameterError("experiment: no methods selected");
  if (delta < 0) throw ParameterError("experiment: delta must be >= 0");
  if (!(rate > 0.0) || !(input_rate > 0.0)) throw ParameterError("experiment: rates must be positive");
  (void)window_spec();
  if (cv_folds < 2) throw ParameterError("experiment: cv_folds must be >= 2");
  if (beta_selection != "per-split" && beta_selection != "fixed")
    throw ParameterError("experiment: beta_selection must be 'per-split' or 'fixed'");
  if (beta_selection == "fixed" && !(fixed_beta >= 0.0)) throw ParameterError("experiment: fixed_beta must be >= 0");
  if (beta_count < 1) throw ParameterError("experiment: beta_count must be positive");
  ssm.check();
  nn.check();
}

namespace {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("experiment config: field '") + key + "' has the wrong type");
  }
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  if (!j.is_object()) throw FormatError("experiment config: expected a JSON object");
  if (j.contains("conditions")) {
    for (const auto& c : j.at("conditions")) {
      ConditionSource src;
      src.tag = c.value("tag", std::string{});
      if (c.contains("scene_dir")) {
        std::filesystem::path p = c.at("scene_dir").get<std::string>();
        src.scene_dir = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
      if (c.contains("synth")) {
        auto s = c.at("synth");
        if (!s.contains("condition_tag")) s["condition_tag"] = src.tag;
        src.synth = synth::scene_config_from_json(s);
        if (src.tag.empty()) src.tag = src.synth->condition_tag;
      }
      cfg.conditions.push_back(std::move(src));
    }
  }
  if (j.contains("synthetic_suite")) {
    const auto& s = j.at("synthetic_suite");
    auto suite = synthetic_suite(suite_options_from_json(s));
    for (auto& c : suite) cfg.conditions.push_back(std::move(c));
  }
  if (j.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : j.at("methods")) cfg.methods.push_back(Method::parse(m.get<std::string>()));
  }
  read_opt(j, "rate", cfg.rate);
  read_opt(j, "input_rate", cfg.input_rate);
  read_opt(j, "delta", cfg.delta);
  read_opt(j, "window_s", cfg.window_s);
  read_opt(j, "overlap_s", cfg.overlap_s);
  read_opt(j, "cv_folds", cfg.cv_folds);
  read_opt(j, "beta_count", cfg.beta_count);
  read_opt(j, "beta_min_exp", cfg.beta_min_exp);
  read_opt(j, "beta_max_exp", cfg.beta_max_exp);
  read_opt(j, "beta_selection", cfg.beta_selection);
  read_opt(j, "fixed_beta", cfg.fixed_beta);
  read_opt(j, "standardize", cfg.standardize);
  read_opt(j, "seed", cfg.seed);
  read_opt(j, "threads", cfg.threads);
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("preprocessing")) {
    const auto& p = j.at("preprocessing");
    read_opt(p, "common_average", cfg.preprocessing.common_average);
    read_opt(p, "bandpass", cfg.preprocessing.bandpass);
    read_opt(p, "bandpass_order", cfg.preprocessing.bandpass_order);
    read_opt(p, "low_hz", cfg.preprocessing.low_hz);
    read_opt(p, "high_hz", cfg.preprocessing.high_hz);
  }
  if (j.contains("ssm")) {
    const auto& s = j.at("ssm");
    read_opt(s, "c0", cfg.ssm.hyper.c0);
    read_opt(s, "a0", cfg.ssm.hyper.a0);
    read_opt(s, "b0", cfg.ssm.hyper.b0);
    read_opt(s, "k_p", cfg.ssm.k_p);
    read_opt(s, "k_a", cfg.ssm.k_a);
    read_opt(s, "em_iterations", cfg.ssm.em_iterations);
    read_opt(s, "init_span_s", cfg.ssm.init_span_s);
    read_opt(s, "refit_unattended", cfg.ssm.refit_unattended);
  }
  if (j.contains("nn")) {
    const auto& n = j.at("nn");
    read_opt(n, "filters", cfg.nn.filters);
    read_opt(n, "learning_rate", cfg.nn.learning_rate);
    read_opt(n, "iterations", cfg.nn.iterations);
    read_opt(n, "batch_samples", cfg.nn.batch_samples);
    read_opt(n, "windows_per_batch", cfg.nn.windows_per_batch);
    read_opt(n, "dropout_rate", cfg.nn.dropout_rate);
    read_opt(n, "beta1", cfg.nn.beta1);
    read_opt(n, "beta2", cfg.nn.beta2);
    read_opt(n, "epsilon", cfg.nn.epsilon);
    read_opt(n, "momentum_decay", cfg.nn.momentum_decay);
    read_opt(n, "eval_every", cfg.nn.eval_every);
  }
  cfg.preprocessing.target_rate = cfg.rate;
  return cfg;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  auto& conds = j["conditions"] = nlohmann::json::array();
  for (const auto& c : cfg.conditions) {
    nlohmann::json e;
    e["tag"] = c.tag;
    if (c.scene_dir) e["scene_dir"] = c.scene_dir->string();
    if (c.synth) e["synth"] = synth::to_json(*c.synth);
    conds.push_back(e);
  }
  auto& methods = j["methods"] = nlohmann::json::array();
  for (const auto& m : cfg.methods) methods.push_back(m.name());
  j["rate"] = cfg.rate;
  j["input_rate"] = cfg.input_rate;
  j["delta"] = cfg.delta;
  j["window_s"] = cfg.window_s;
  j["overlap_s"] = cfg.overlap_s;
  j["cv_folds"] = cfg.cv_folds;
  j["beta_count"] = cfg.beta_count;
  j["beta_min_exp"] = cfg.beta_min_exp;
  j["beta_max_exp"] = cfg.beta_max_exp;
  j["beta_selection"] = cfg.beta_selection;
  j["fixed_beta"] = cfg.fixed_beta;
  j["standardize"] = cfg.standardize;
  j["seed"] = cfg.seed;
  j["preprocessing"] = {{"common_average", cfg.preprocessing.common_average},
                        {"bandpass", cfg.preprocessing.bandpass},
                        {"bandpass_order", cfg.preprocessing.bandpass_order},
                        {"low_hz", cfg.preprocessing.low_hz},
                        {"high_hz", cfg.preprocessing.high_hz}};
  j["ssm"] = {{"c0", cfg.ssm.hyper.c0},
              {"a0", cfg.ssm.hyper.a0},
              {"b0", cfg.ssm.hyper.b0},
              {"k_p", cfg.ssm.k_p},
              {"k_a", cfg.ssm.k_a},
              {"em_iterations", cfg.ssm.em_iterations},
              {"init_span_s", cfg.ssm.init_span_s},
              {"refit_unattended", cfg.ssm.refit_unattended}};
  j["nn"] = {{"filters", cfg.nn.filters},
             {"learning_rate", cfg.nn.learning_rate},
             {"iterations", cfg.nn.iterations},
             {"batch_samples", cfg.nn.batch_samples},
             {"windows_per_batch", cfg.nn.windows_per_batch},
             {"dropout_rate", cfg.nn.dropout_rate},
             {"beta1", cfg.nn.beta1},
             {"beta2", cfg.nn.beta2},
             {"epsilon", cfg.nn.epsilon},
             {"momentum_decay", cfg.nn.momentum_decay},
             {"eval_every", cfg.nn.eval_every}};
  return j;
}

SuiteOptions suite_options_from_json(const nlohmann::json& j) {
  SuiteOptions o;
  read_opt(j, "seed", o.seed);
  read_opt(j, "duration_s", o.duration_s);
  read_opt(j, "channels", o.channels);
  read_opt(j, "base_noise_std", o.base_noise_std);
  read_opt(j, "nonlinearity_mix", o.nonlinearity_mix);
  read_opt(j, "tracking_modulation", o.tracking_modulation);
  read_opt(j, "tracking_timescale_s", o.tracking_timescale_s);
  read_opt(j, "switch_times_s", o.switch_times_s);
  return o;
}

std::vector<ConditionSource> synthetic_suite(const SuiteOptions& o) {
  std::vector<ConditionSource> out;
  const auto tags = synth::default_condition_tags();
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto cfg = synth::condition_preset(tags[i], o.seed * 1000 + i + 1, o.base_noise_std);
    cfg.kernel_seed = o.seed * 1000 + 999;
    cfg.duration_s = o.duration_s;
    cfg.channel_count = o.channels;
    cfg.nonlinearity_mix = o.nonlinearity_mix;
    cfg.tracking_modulation = o.tracking_modulation;
    cfg.tracking_timescale_s = o.tracking_timescale_s;
    cfg.switch_times_s = o.switch_times_s;
    // Alternate the initially attended speaker across conditions and seeds.
    cfg.initial_speaker = static_cast<int>((o.seed + i) % 2) + 1;
    out.push_back({tags[i], std::nullopt, cfg});
  }
  return out;
}

// ---------------------------------------------------------------- pipeline stages

namespace {

Envelope to_rate(const Envelope& e, double rate) {
  return std::abs(e.rate - rate) > 1e-9 ? dsp::resample_to(e, rate) : e;
}

std::vector<Speaker> labels_to_rate(const std::vector<Speaker>& labels, double from_rate, double to_rate,
                                    std::size_t n) {
  if (labels.empty()) return {};
  std::vector<Speaker> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto src = static_cast<std::size_t>(std::llround(static_cast<double>(k) * from_rate / to_rate));
    out[k] = labels[std::min(src, labels.size() - 1)];
  }
  return out;
}

void truncate(Envelope& e, std::size_t n) { e.samples.resize(n); }

}  // namespace

PreparedRecording prepare(const Recording& rec, const ExperimentConfig& cfg) {
  auto options = cfg.preprocessing;
  options.target_rate = cfg.rate;
  MultichannelSignal eeg = dsp::preprocess_eeg(rec.eeg, options);
  Envelope e1 = to_rate(rec.e1, cfg.rate);
  Envelope e2 = to_rate(rec.e2, cfg.rate);
  const std::size_t n = std::min({eeg.length(), e1.size(), e2.size()});
  if (eeg.length() > n) eeg.data.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(n));

  if (cfg.standardize) {
    // Per-channel means, one recording-wide scale: per-channel scaling would
    // change the cross-channel weighting from one recording to the next.
    for (Eigen::Index c = 0; c < eeg.data.rows(); ++c) eeg.data.row(c).array() -= eeg.data.row(c).mean();
    const double rms = std::sqrt(eeg.data.squaredNorm() / static_cast<double>(eeg.data.size()));
    if (rms > 0.0) eeg.data /= rms;
  }

  PreparedRecording out;
  out.condition = rec.condition;
  out.lag = build_lag_matrix(eeg, cfg.delta);
  const auto rows = static_cast<std::size_t>(out.lag.rows());
  truncate(e1, rows);
  truncate(e2, rows);
  out.e1 = std::move(e1);
  out.e2 = std::move(e2);
  out.attention = labels_to_rate(rec.attention, rec.e1.rate, cfg.rate, rows);
  if (!out.attention.empty()) {
    out.attended.rate = cfg.rate;
    out.attended.samples.resize(rows);
    for (std::size_t k = 0; k < rows; ++k)
      out.attended.samples[k] = out.attention[k] == Speaker::One ? out.e1.samples[k] : out.e2.samples[k];
  }
  return out;
}

std::vector<Fold> make_folds(std::span<const PreparedRecording* const> recordings, int k) {
  if (k < 1) throw ParameterError("make_folds: k must be positive");
  Eigen::Index total = 0;
  for (const auto* r : recordings) {
    if (r->attended.size() == 0) throw DataError("make_folds: recording '" + r->condition + "' has no attention labels");
    total += r->lag.rows();
  }
  if (total < k) throw LengthError("make_folds: fewer rows than folds");
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    const Eigen::Index lo = total * f / k;
    const Eigen::Index hi = total * (f + 1) / k;
    Fold& fold = folds[static_cast<std::size_t>(f)];
    Eigen::Index offset = 0;
    for (const auto* r : recordings) {
      const Eigen::Index a = std::max(lo, offset);
      const Eigen::Index b = std::min(hi, offset + r->lag.rows());
      if (a < b) {
        LagMatrix block;
        block.delta = r->lag.delta;
        block.channel_count = r->lag.channel_count;
        block.rate = r->lag.rate;
        block.values = r->lag.values.middleRows(a - offset, b - a);
        fold.lag = stack_rows(fold.lag, block);
        fold.env.rate = r->attended.rate;
        fold.env.samples.insert(fold.env.samples.end(), r->attended.samples.begin() + (a - offset),
                                r->attended.samples.begin() + (b - offset));
        if (!fold.provenance.empty()) fold.provenance += "+";
        fold.provenance += r->condition + "[" + std::to_string(a - offset) + "," + std::to_string(b - offset) + ")";
      }
      offset += r->lag.rows();
    }
  }
  return folds;
}

LsTraining train_ls(std::span<const PreparedRecording* const> recordings, const ExperimentConfig& cfg) {
  const auto folds = make_folds(recordings, cfg.cv_folds);
  std::vector<ls::MomentPair> moments;
  moments.reserve(folds.size());
  ls::MomentPair pooled;
  for (const auto& f : folds) {
    moments.push_back(ls::accumulate_moments(f.lag, f.env));
    pooled = ls::merge(pooled, moments.back());
  }
  LsTraining out;
  double beta = cfg.fixed_beta;
  if (cfg.beta_selection == "per-split") {
    const auto grid = ls::default_beta_grid(pooled, cfg.beta_count, cfg.beta_min_exp, cfg.beta_max_exp);
    out.search = ls::cross_validate_beta(folds, moments, grid);
    beta = out.search.best_beta;
  }
  const auto D = ls::build_derivative_regularizer(recordings.front()->lag.channel_count, cfg.delta);
  out.estimator = ls::solve_estimator(pooled, D, beta);
  return out;
}

NnTraining train_nn(std::span<const PreparedRecording* const> recordings, const ExperimentConfig& cfg,
                    std::uint64_t seed) {
  const auto folds = make_folds(recordings, cfg.cv_folds);
  auto tc = cfg.nn;
  tc.seed = seed;
  const std::span<const Fold> all(folds);
  const auto result = nn::train(all.first(all.size() - 1), all.last(1), tc);
  return {result.net, result.loss_trace, result.selected_iteration};
}

DecodeOutcome evaluate_reconstruction(const Envelope& reconstruction, const PreparedRecording& rec,
                                      const ExperimentConfig& cfg, bool run_ssm) {
  if (rec.attention.empty()) throw DataError("evaluate: recording '" + rec.condition + "' has no attention labels");
  DecodeOutcome out;
  const WindowSpec ws = cfg.window_spec();
  out.series = windowed_correlations(reconstruction, rec.e1, rec.e2, ws);
  out.truth = window_labels(rec.attention, ws, out.series.size());
  out.raw_decisions = instantaneous_decisions(out.series);
  out.raw_performance = decoding_performance(out.raw_decisions, out.truth);
  out.raw_correct.resize(out.truth.size());
  for (std::size_t k = 0; k < out.truth.size(); ++k) out.raw_correct[k] = out.raw_decisions[k] == out.truth[k];
  if (run_ssm) {
    out.ssm_trace = ssm::run_online(out.series, out.truth, cfg.ssm);
    std::vector<Speaker> truth_at;
    truth_at.reserve(out.ssm_trace->instant.size());
    for (std::size_t i : out.ssm_trace->instant) truth_at.push_back(out.truth[i]);
    out.ssm_performance = decoding_performance(out.ssm_trace->decision, truth_at);
    out.ssm_correct.resize(truth_at.size());
    for (std::size_t i = 0; i < truth_at.size(); ++i) out.ssm_correct[i] = out.ssm_trace->decision[i] == truth_at[i];
  }
  return out;
}

// ---------------------------------------------------------------- experiment

const MethodResult* EvaluationReport::find(const std::string& method, const std::string& condition) const {
  for (const auto& r : results)
    if (r.method == method && r.condition == condition) return &r;
  return nullptr;
}

double EvaluationReport::median_performance(const std::string& method) const {
  std::vector<double> v;
  for (const auto& r : results)
    if (r.method == method) v.push_back(r.decoding_performance);
  if (v.empty()) throw ParameterError("median_performance: no results for method " + method);
  return summarize(v).median;
}

ExperimentError::ExperimentError(const std::string& stage, std::size_t split, const std::string& what,
                                 EvaluationReport partial)
    : Error("stage '" + stage + "', split " + std::to_string(split) + ": " + what),
      stage_(stage),
      split_(split),
      partial_(std::move(partial)) {}

int worker_count(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("AADKIT_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<int>(n, static_cast<int>(cap));
  }
  return n;
}

namespace {

struct SplitOutcome {
  SplitInfo info;
  std::vector<MethodResult> results;            // in cfg.methods order
  std::vector<CorrelationResult> correlations;  // LS then NN when present
};

struct StageFailure {
  std::string stage;
  std::string message;
};

std::uint64_t split_seed(std::uint64_t seed, std::size_t split) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), 0xa11du};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

SplitOutcome run_split(const ExperimentConfig& cfg, const std::vector<PreparedRecording>& prepared, const Split& split,
                       std::size_t split_id, std::string& stage) {
  SplitOutcome out;
  const PreparedRecording& test = prepared[split.test];
  out.info.id = split_id;
  out.info.test_condition = test.condition;
  std::vector<const PreparedRecording*> train;
  for (std::size_t i : split.train) {
    // Protocol integrity: the test condition never contributes training rows.
    if (prepared[i].condition == test.condition || i == split.test)
      throw std::logic_error("leave-one-condition-out violated: test condition in training set");
    train.push_back(&prepared[i]);
    out.info.train_conditions.push_back(prepared[i].condition);
  }

  const bool want_ls = std::any_of(cfg.methods.begin(), cfg.methods.end(), [](const Method& m) { return m.decoder == Decoder::LS; });
  const bool want_nn = std::any_of(cfg.methods.begin(), cfg.methods.end(), [](const Method& m) { return m.decoder == Decoder::NN; });
  auto wants_ssm = [&cfg](Decoder d) {
    return std::any_of(cfg.methods.begin(), cfg.methods.end(), [d](const Method& m) { return m.decoder == d && m.ssm; });
  };

  std::optional<DecodeOutcome> ls_outcome, nn_outcome;
  if (want_ls) {
    stage = "train-ls";
    const auto trained = train_ls(train, cfg);
    out.info.beta = trained.estimator.beta;
    stage = "decode-ls";
    const auto rec = ls::reconstruct(trained.estimator, test.lag);
    ls_outcome = evaluate_reconstruction(rec, test, cfg, wants_ssm(Decoder::LS));
  }
  if (want_nn) {
    stage = "train-nn";
    const auto trained = train_nn(train, cfg, split_seed(cfg.seed, split_id));
    out.info.nn_selected_iteration = trained.selected_iteration;
    stage = "decode-nn";
    const auto rec = nn::forward(trained.net, test.lag);
    nn_outcome = evaluate_reconstruction(rec, test, cfg, wants_ssm(Decoder::NN));
  }

  stage = "metrics";
  for (const Method& m : cfg.methods) {
    const DecodeOutcome& o = m.decoder == Decoder::LS ? *ls_outcome : *nn_outcome;
    MethodResult r;
    r.method = m.name();
    r.condition = test.condition;
    r.decoding_performance = m.ssm ? o.ssm_performance : o.raw_performance;
    r.correct = m.ssm ? o.ssm_correct : o.raw_correct;
    r.decisions = r.correct.size();
    out.results.push_back(std::move(r));
  }
  for (const auto& [name, o] : {std::pair{"LS", &ls_outcome}, std::pair{"NN", &nn_outcome}}) {
    if (!o->has_value()) continue;
    const auto au = attended_unattended_metrics((*o)->series, (*o)->truth);
    out.correlations.push_back({name, test.condition, au.attended, au.unattended, au.rho_attended, au.rho_unattended});
  }
  return out;
}

EvaluationReport assemble(const ExperimentConfig& cfg, const std::vector<std::optional<SplitOutcome>>& outcomes) {
  EvaluationReport report;
  report.config = to_json(cfg);
  for (const auto& o : outcomes)
    if (o) report.splits.push_back(o->info);
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi)
    for (const auto& o : outcomes)
      if (o) report.results.push_back(o->results[mi]);
  for (const char* dec : {"LS", "NN"})
    for (const auto& o : outcomes)
      if (o)
        for (const auto& c : o->correlations)
          if (c.decoder == dec) report.correlations.push_back(c);
  return report;
}

}  // namespace

EvaluationReport run_experiment(const ExperimentConfig& cfg) {
  cfg.check();
  std::vector<Recording> recordings;
  for (std::size_t i = 0; i < cfg.conditions.size(); ++i) {
    const auto& c = cfg.conditions[i];
    try {
      Recording r = c.scene_dir ? ingest_recording(*c.scene_dir, cfg.input_rate) : from_scene(synth::generate_scene(*c.synth));
      r.condition = c.tag;
      recordings.push_back(std::move(r));
    } catch (const Error& e) {
      throw ExperimentError("load", i, e.what(), EvaluationReport{});
    }
  }
  return run_experiment(cfg, recordings);
}

EvaluationReport run_experiment(const ExperimentConfig& cfg, std::span<const Recording> recordings) {
  const auto started = std::chrono::steady_clock::now();
  if (recordings.size() != cfg.conditions.size())
    throw ParameterError("run_experiment: one recording per configured condition required");
  const auto splits = split_leave_one_condition_out(recordings.size());

  std::vector<PreparedRecording> prepared;
  prepared.reserve(recordings.size());
  for (std::size_t i = 0; i < recordings.size(); ++i) {
    try {
      prepared.push_back(prepare(recordings[i], cfg));
      prepared.back().condition = cfg.conditions[i].tag;
    } catch (const Error& e) {
      throw ExperimentError("prepare", i, e.what(), EvaluationReport{});
    }
  }

  std::vector<std::optional<SplitOutcome>> outcomes(splits.size());
  std::vector<std::optional<StageFailure>> failures(splits.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t s = next.fetch_add(1); s < splits.size(); s = next.fetch_add(1)) {
      std::string stage = "setup";
      try {
        outcomes[s] = run_split(cfg, prepared, splits[s], s, stage);
      } catch (const std::exception& e) {
        failures[s] = StageFailure{stage, e.what()};
      }
    }
  };
  const int workers = std::min<int>(worker_count(cfg.threads), static_cast<int>(splits.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t s = 0; s < splits.size(); ++s)
    if (failures[s]) throw ExperimentError(failures[s]->stage, s, failures[s]->message, assemble(cfg, outcomes));

  EvaluationReport report = assemble(cfg, outcomes);
  report.timestamp = utc_timestamp();
  report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

namespace {

nlohmann::json stats_json(const SummaryStats& s) {
  return {{"median", s.median}, {"q1", s.q1}, {"q3", s.q3}, {"min", s.min}, {"max", s.max}, {"count", s.count}};
}

}  // namespace

nlohmann::json report_to_json(const EvaluationReport& report) {
  nlohmann::json j;
  j["format"] = "aadkit-report";
  j["version"] = 1;
  const auto& c = report.config;
  j["constants"] = {{"delta", c.value("delta", 0)},
                    {"rate_hz", c.value("rate", 0.0)},
                    {"correlation_window_s", c.value("window_s", 0.0)},
                    {"correlation_overlap_s", c.value("overlap_s", 0.0)},
                    {"cv_folds", c.value("cv_folds", 0)},
                    {"em_iterations", c.contains("ssm") ? c["ssm"].value("em_iterations", 0) : 0},
                    {"k_p", c.contains("ssm") ? c["ssm"].value("k_p", 0) : 0},
                    {"k_a", c.contains("ssm") ? c["ssm"].value("k_a", 0) : 0},
                    {"c0", c.contains("ssm") ? c["ssm"].value("c0", 0.0) : 0.0},
                    {"a0", c.contains("ssm") ? c["ssm"].value("a0", 0.0) : 0.0},
                    {"b0", c.contains("ssm") ? c["ssm"].value("b0", 0.0) : 0.0},
                    {"init_span_s", c.contains("ssm") ? c["ssm"].value("init_span_s", 0.0) : 0.0}};
  j["config"] = report.config;
  auto& splits = j["splits"] = nlohmann::json::array();
  for (const auto& s : report.splits) {
    nlohmann::json e{{"id", s.id}, {"test_condition", s.test_condition}, {"train_conditions", s.train_conditions}};
    if (s.beta) e["beta"] = *s.beta;
    if (s.nn_selected_iteration) e["nn_selected_iteration"] = *s.nn_selected_iteration;
    splits.push_back(e);
  }
  auto& results = j["results"] = nlohmann::json::array();
  std::vector<std::string> methods;
  for (const auto& r : report.results) {
    results.push_back({{"method", r.method},
                       {"condition", r.condition},
                       {"decoding_performance", r.decoding_performance},
                       {"decisions", r.decisions}});
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  auto& summary = j["summary"] = nlohmann::json::object();
  for (const auto& m : methods) summary[m] = {{"median_decoding_performance", report.median_performance(m)}};
  auto& corr = j["correlations"] = nlohmann::json::array();
  for (const auto& cr : report.correlations)
    corr.push_back({{"decoder", cr.decoder},
                    {"condition", cr.condition},
                    {"attended", stats_json(cr.attended)},
                    {"unattended", stats_json(cr.unattended)}});
  j["metadata"] = {{"timestamp", report.timestamp}, {"runtime_s", report.runtime_s}};
  return j;
}

void write_report(const EvaluationReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_json(dir / "report.json", report_to_json(report));

  auto open = [&dir](const char* name) {
    std::ofstream os(dir / name);
    if (!os) throw Error("cannot write " + (dir / name).string());
    os << std::setprecision(17);
    return os;
  };
  {
    auto os = open("performance.csv");
    os << "method,condition,decoding_performance,decisions\n";
    for (const auto& r : report.results)
      os << r.method << ',' << r.condition << ',' << r.decoding_performance << ',' << r.decisions << '\n';
  }
  {
    auto os = open("boxplot.csv");
    os << "series,group,min,q1,median,q3,max,count\n";
    auto row = [&os](const std::string& series, const std::string& group, const SummaryStats& s) {
      os << series << ',' << group << ',' << s.min << ',' << s.q1 << ',' << s.median << ',' << s.q3 << ',' << s.max
         << ',' << s.count << '\n';
    };
    for (const auto& c : report.correlations) {
      row(c.decoder + "/attended", c.condition, c.attended);
      row(c.decoder + "/unattended", c.condition, c.unattended);
    }
    std::vector<std::string> methods;
    for (const auto& r : report.results)
      if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    for (const auto& m : methods) {
      std::vector<double> v;
      for (const auto& r : report.results)
        if (r.method == m) v.push_back(r.decoding_performance);
      row(m + "/decoding_performance", "all", summarize(v));
    }
  }
  {
    auto os = open("correlations.csv");
    os << "decoder,condition,window_index,rho_attended,rho_unattended\n";
    for (const auto& c : report.correlations)
      for (std::size_t k = 0; k < c.rho_attended.size(); ++k)
        os << c.decoder << ',' << c.condition << ',' << k << ',' << c.rho_attended[k] << ',' << c.rho_unattended[k]
           << '\n';
  }
  {
    auto os = open("trials.csv");
    os << "method,condition,trial,correct\n";
    for (const auto& r : report.results)
      for (std::size_t k = 0; k < r.correct.size(); ++k)
        os << r.method << ',' << r.condition << ',' << k << ',' << int(r.correct[k]) << '\n';
  }
}

}  // namespace aadkit::harness
