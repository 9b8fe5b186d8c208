// aadkit command-line driver.

#include "aadkit/binary_io.hpp"
#include "aadkit/corrwin.hpp"
#include "aadkit/error.hpp"
#include "aadkit/harness.hpp"
#include "aadkit/lsdecoder.hpp"
#include "aadkit/nndecoder.hpp"
#include "aadkit/ssm.hpp"
#include "aadkit/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace aadkit;

namespace {

// Flags that override ExperimentConfig fields after the JSON file is read.
struct Overrides {
  std::optional<int> delta;
  std::optional<double> window_s;
  std::optional<double> overlap_s;
  std::optional<int> cv_folds;
  std::optional<std::string> beta_selection;
  std::optional<double> fixed_beta;
  std::optional<int> k_p;
  std::optional<int> k_a;
  std::optional<int> em_iterations;
  std::optional<double> c0, a0, b0;
  std::optional<int> nn_filters;
  std::optional<int> nn_iterations;
  std::optional<double> nn_learning_rate;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> methods;
  std::string output;

  void attach(CLI::App& app, bool with_methods) {
    app.add_option("--delta", delta, "Decoder lag count");
    app.add_option("--window-s", window_s, "Correlation window length in seconds");
    app.add_option("--overlap-s", overlap_s, "Overlap between consecutive windows in seconds");
    app.add_option("--cv-folds", cv_folds, "Cross-validation folds");
    app.add_option("--beta-selection", beta_selection, "per-split or fixed")->check(CLI::IsMember({"per-split", "fixed"}));
    app.add_option("--fixed-beta", fixed_beta, "Regularization weight when --beta-selection=fixed");
    app.add_option("--k-p", k_p, "State-space lookahead instants");
    app.add_option("--k-a", k_a, "State-space lag instants");
    app.add_option("--em-iterations", em_iterations, "EM sweeps per smoothing window");
    app.add_option("--c0", c0, "Anchor prior scale");
    app.add_option("--a0", a0, "Inverse-gamma shape");
    app.add_option("--b0", b0, "Inverse-gamma scale");
    app.add_option("--nn-filters", nn_filters, "Hidden filters of the convolutional decoder");
    app.add_option("--nn-iterations", nn_iterations, "Training iterations of the convolutional decoder");
    app.add_option("--nn-learning-rate", nn_learning_rate, "Nadam learning rate");
    app.add_option("--seed", seed, "Experiment seed");
    app.add_option("--threads", threads, "Worker threads (capped by AADKIT_THREADS)");
    app.add_option("-o,--output", output, "Output directory");
    if (with_methods) app.add_option("--methods", methods, "Subset of LS, NN, LS-SSM, NN-SSM");
  }

  void apply(harness::ExperimentConfig& cfg) const {
    if (delta) cfg.delta = *delta;
    if (window_s) cfg.window_s = *window_s;
    if (overlap_s) cfg.overlap_s = *overlap_s;
    if (cv_folds) cfg.cv_folds = *cv_folds;
    if (beta_selection) cfg.beta_selection = *beta_selection;
    if (fixed_beta) cfg.fixed_beta = *fixed_beta;
    if (k_p) cfg.ssm.k_p = *k_p;
    if (k_a) cfg.ssm.k_a = *k_a;
    if (em_iterations) cfg.ssm.em_iterations = *em_iterations;
    if (c0) cfg.ssm.hyper.c0 = *c0;
    if (a0) cfg.ssm.hyper.a0 = *a0;
    if (b0) cfg.ssm.hyper.b0 = *b0;
    if (nn_filters) cfg.nn.filters = *nn_filters;
    if (nn_iterations) cfg.nn.iterations = *nn_iterations;
    if (nn_learning_rate) cfg.nn.learning_rate = *nn_learning_rate;
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (!methods.empty()) {
      cfg.methods.clear();
      for (const auto& m : methods) cfg.methods.push_back(harness::Method::parse(m));
    }
    if (!output.empty()) cfg.output_dir = output;
  }
};

harness::ExperimentConfig load_config(const std::string& path, const Overrides& ov) {
  harness::ExperimentConfig cfg;
  if (!path.empty()) cfg = harness::config_from_json(io::read_json(path), fs::path(path).parent_path());
  ov.apply(cfg);
  return cfg;
}

harness::Recording load_recording(const harness::ConditionSource& src, double input_rate) {
  auto rec = src.scene_dir ? harness::ingest_recording(*src.scene_dir, input_rate)
                           : harness::from_scene(synth::generate_scene(*src.synth));
  rec.condition = src.tag;
  return rec;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  for (const auto& l : lines) os << l << '\n';
}

// ---- synth

int cmd_synth(const std::string& config_path, const std::string& out, bool suite, std::uint64_t seed,
              double duration, int channels, double noise, double nonlin, double tracking, double timescale,
              const std::vector<double>& switches, const std::string& tag) {
  if (out.empty()) throw ParameterError("synth: --output is required");
  std::vector<std::pair<std::string, synth::SceneConfig>> scenes;
  if (suite) {
    harness::SuiteOptions o;
    o.seed = seed;
    o.duration_s = duration;
    o.channels = channels;
    o.base_noise_std = noise;
    o.nonlinearity_mix = nonlin;
    o.tracking_modulation = tracking;
    o.tracking_timescale_s = timescale;
    o.switch_times_s = switches;
    for (const auto& c : harness::synthetic_suite(o))
      scenes.emplace_back(c.tag, *c.synth);
  } else {
    synth::SceneConfig cfg;
    if (!config_path.empty()) {
      cfg = synth::scene_config_from_json(io::read_json(config_path));
    } else {
      cfg = synth::condition_preset(tag, seed, noise);
      cfg.duration_s = duration;
      cfg.channel_count = channels;
      cfg.nonlinearity_mix = nonlin;
      cfg.tracking_modulation = tracking;
      cfg.tracking_timescale_s = timescale;
      cfg.switch_times_s = switches;
    }
    scenes.emplace_back("", cfg);
  }
  for (const auto& [name, cfg] : scenes) {
    const fs::path dir = name.empty() ? fs::path(out) : fs::path(out) / name;
    const auto scene = synth::generate_scene(cfg);
    synth::save_scene(scene, dir);
    std::cout << dir.string() << ": " << scene.eeg.channels() << " channels, " << scene.eeg.length()
              << " samples, snr " << scene.achieved_snr << '\n';
  }
  return 0;
}

// ---- train

int cmd_train(const std::string& config_path, const Overrides& ov, const std::string& decoder,
              const std::vector<std::string>& exclude) {
  auto cfg = load_config(config_path, ov);
  cfg.check();
  if (cfg.output_dir.empty()) throw ParameterError("train: --output is required");
  std::vector<harness::PreparedRecording> prepared;
  for (const auto& c : cfg.conditions) {
    if (std::find(exclude.begin(), exclude.end(), c.tag) != exclude.end()) continue;
    prepared.push_back(harness::prepare(load_recording(c, cfg.input_rate), cfg));
  }
  if (prepared.empty()) throw ParameterError("train: every condition was excluded");
  std::vector<const harness::PreparedRecording*> ptrs;
  for (const auto& p : prepared) ptrs.push_back(&p);

  fs::create_directories(cfg.output_dir);
  const fs::path stem = cfg.output_dir / (decoder == "ls" ? "linear" : "conv");
  if (decoder == "ls") {
    const auto trained = harness::train_ls(ptrs, cfg);
    ls::save_estimator(trained.estimator, stem);
    std::cout << "beta " << trained.estimator.beta << (trained.estimator.used_pseudo_inverse ? " (pseudo-inverse)" : "")
              << '\n';
    for (const auto& w : trained.search.warnings) std::cerr << "warning: " << w << '\n';
  } else {
    const auto trained = harness::train_nn(ptrs, cfg, cfg.seed);
    nn::save_network(trained.net, stem);
    std::cout << "selected iteration " << trained.selected_iteration << '\n';
  }
  io::write_json(cfg.output_dir / "experiment.json", harness::to_json(cfg));
  std::cout << "wrote " << stem.string() << ".json\n";
  return 0;
}

// ---- decode

int cmd_decode(const std::string& config_path, const Overrides& ov, const std::string& model,
               const std::string& scene_dir, bool use_ssm) {
  auto cfg = load_config(config_path, ov);
  if (cfg.output_dir.empty()) throw ParameterError("decode: --output is required");
  const auto rec = harness::ingest_recording(scene_dir, cfg.input_rate);
  const auto prepared = harness::prepare(rec, cfg);

  const auto header = io::read_json(fs::path(model + ".json"));
  const auto format = header.value("format", std::string{});
  Envelope reconstruction;
  if (format == "aadkit-linear-estimator") {
    const auto est = ls::load_estimator(model);
    if (est.delta != cfg.delta) throw ParameterError("decode: model delta differs from --delta");
    reconstruction = ls::reconstruct(est, prepared.lag);
  } else if (format == "aadkit-conv-estimator") {
    const auto net = nn::load_network(model);
    if (net.delta != cfg.delta) throw ParameterError("decode: model delta differs from --delta");
    reconstruction = nn::forward(net, prepared.lag);
  } else {
    throw FormatError(model + ".json: unknown model format '" + format + "'");
  }

  fs::create_directories(cfg.output_dir);
  if (prepared.attention.empty()) {
    if (use_ssm) throw DataError("decode: the state-space smoother needs attention labels for its initial span");
    const auto series = windowed_correlations(reconstruction, prepared.e1, prepared.e2, cfg.window_spec());
    write_correlation_csv(series, cfg.output_dir / "correlations.csv");
    std::cout << series.size() << " windows decoded (no ground truth)\n";
    return 0;
  }
  const auto out = harness::evaluate_reconstruction(reconstruction, prepared, cfg, use_ssm);
  write_correlation_csv(out.series, cfg.output_dir / "correlations.csv");
  std::vector<std::string> rows{"window_index,decision,truth"};
  for (std::size_t k = 0; k < out.truth.size(); ++k)
    rows.push_back(std::to_string(k) + ',' + std::to_string(to_int(out.raw_decisions[k])) + ',' +
                   std::to_string(to_int(out.truth[k])));
  write_lines(cfg.output_dir / "decisions.csv", rows);
  std::cout << std::fixed << std::setprecision(2) << "instantaneous: " << out.raw_performance << "% of "
            << out.truth.size() << " windows\n";
  if (out.ssm_trace) {
    ssm::write_posterior_csv(*out.ssm_trace, cfg.output_dir / "posterior.csv");
    std::cout << "state-space:   " << out.ssm_performance << "% of " << out.ssm_trace->instant.size()
              << " instants\n";
  }
  return 0;
}

// ---- eval / report

void print_summary(const nlohmann::json& report) {
  std::cout << std::left << std::setw(10) << "method" << std::setw(22) << "condition" << "performance\n";
  for (const auto& r : report.at("results"))
    std::cout << std::setw(10) << r.at("method").get<std::string>() << std::setw(22)
              << r.at("condition").get<std::string>() << std::fixed << std::setprecision(2)
              << r.at("decoding_performance").get<double>() << "%\n";
  std::cout << '\n';
  for (const auto& [method, s] : report.at("summary").items())
    std::cout << "median " << std::setw(8) << method << std::fixed << std::setprecision(2)
              << s.at("median_decoding_performance").get<double>() << "%\n";
  for (const auto& c : report.at("correlations"))
    std::cout << c.at("decoder").get<std::string>() << ' ' << c.at("condition").get<std::string>()
              << ": attended median " << std::setprecision(4) << c.at("attended").at("median").get<double>()
              << ", unattended median " << c.at("unattended").at("median").get<double>() << '\n';
}

int cmd_eval(const std::string& config_path, const Overrides& ov) {
  const auto cfg = load_config(config_path, ov);
  try {
    const auto report = harness::run_experiment(cfg);
    const fs::path dir = cfg.output_dir.empty() ? fs::path("aadkit-report") : cfg.output_dir;
    harness::write_report(report, dir);
    print_summary(harness::report_to_json(report));
    std::cout << "report written to " << dir.string() << '\n';
  } catch (const harness::ExperimentError& e) {
    if (!cfg.output_dir.empty() && !e.partial().results.empty()) {
      harness::write_report(e.partial(), cfg.output_dir);
      std::cerr << "partial report written to " << cfg.output_dir.string() << '\n';
    }
    throw;
  }
  return 0;
}

int cmd_report(const std::string& input) {
  fs::path path = input;
  if (fs::is_directory(path)) path /= "report.json";
  const auto j = io::read_json(path);
  if (j.value("format", std::string{}) != "aadkit-report") throw FormatError(path.string() + ": not an aadkit report");
  print_summary(j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aadkit: auditory attention decoding toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic scenes");
  std::string synth_config, synth_out, synth_tag = "anechoic";
  bool synth_suite = false;
  std::uint64_t synth_seed = 1;
  double synth_duration = 240.0, synth_noise = 66.0, synth_nonlin = 0.0, synth_tracking = 3.0, synth_timescale = 2.0;
  int synth_channels = 16;
  std::vector<double> synth_switches;
  synth_cmd->add_option("-c,--config", synth_config, "Scene config JSON")->check(CLI::ExistingFile);
  synth_cmd->add_option("-o,--output", synth_out, "Output directory")->required();
  synth_cmd->add_flag("--suite", synth_suite, "Write the four-condition suite into subdirectories");
  synth_cmd->add_option("--seed", synth_seed, "Scene seed");
  synth_cmd->add_option("--duration-s", synth_duration, "Scene length in seconds");
  synth_cmd->add_option("--channels", synth_channels, "EEG channels");
  synth_cmd->add_option("--noise-std", synth_noise, "Base noise standard deviation");
  synth_cmd->add_option("--nonlinearity-mix", synth_nonlin, "Quadratic mix of the attended envelope");
  synth_cmd->add_option("--tracking-modulation", synth_tracking, "Depth of slow neural-tracking fluctuation");
  synth_cmd->add_option("--tracking-timescale-s", synth_timescale, "Time constant of the tracking fluctuation");
  synth_cmd->add_option("--switch-times-s", synth_switches, "Attention switch times");
  synth_cmd->add_option("--condition", synth_tag, "Condition preset tag");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a decoder on the configured conditions");
  std::string train_config, train_decoder = "ls";
  std::vector<std::string> train_exclude;
  Overrides train_ov;
  train_cmd->add_option("-c,--config", train_config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--decoder", train_decoder, "ls or nn")->check(CLI::IsMember({"ls", "nn"}));
  train_cmd->add_option("--exclude", train_exclude, "Condition tags held out of training");
  train_ov.attach(*train_cmd, false);

  // decode
  auto* decode_cmd = app.add_subcommand("decode", "Decode attention in one scene with a trained model");
  std::string decode_config, decode_model, decode_scene, decode_ssm = "on";
  Overrides decode_ov;
  decode_cmd->add_option("-c,--config", decode_config, "Experiment config JSON")->check(CLI::ExistingFile);
  decode_cmd->add_option("-m,--model", decode_model, "Model stem (without .json)")->required();
  decode_cmd->add_option("-s,--scene", decode_scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  decode_cmd->add_option("--ssm", decode_ssm, "on or off")->check(CLI::IsMember({"on", "off"}));
  decode_ov.attach(*decode_cmd, false);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Run the leave-one-condition-out experiment");
  std::string eval_config;
  Overrides eval_ov;
  eval_cmd->add_option("-c,--config", eval_config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  eval_ov.attach(*eval_cmd, true);

  // report
  auto* report_cmd = app.add_subcommand("report", "Summarize a written report");
  std::string report_input;
  report_cmd->add_option("input", report_input, "Report directory or report.json")->required()->check(CLI::ExistingPath);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd)
      return cmd_synth(synth_config, synth_out, synth_suite, synth_seed, synth_duration, synth_channels, synth_noise,
                       synth_nonlin, synth_tracking, synth_timescale, synth_switches, synth_tag);
    if (*train_cmd) return cmd_train(train_config, train_ov, train_decoder, train_exclude);
    if (*decode_cmd) return cmd_decode(decode_config, decode_ov, decode_model, decode_scene, decode_ssm == "on");
    if (*eval_cmd) return cmd_eval(eval_config, eval_ov);
    if (*report_cmd) return cmd_report(report_input);
  } catch (const harness::ExperimentError& e) {
    std::cerr << "error [" << e.stage() << ", split " << e.split() << "]: " << e.what() << '\n';
    return 3;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
