#pragma once

#include "aadkit/corrwin.hpp"
#include "aadkit/dsp.hpp"
#include "aadkit/error.hpp"
#include "aadkit/lagspace.hpp"
#include "aadkit/lsdecoder.hpp"
#include "aadkit/nndecoder.hpp"
#include "aadkit/ssm.hpp"
#include "aadkit/synth.hpp"
#include "aadkit/types.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aadkit::harness {

// EEG plus both speakers' envelopes for one analysis condition.
struct Recording {
  std::string condition;
  MultichannelSignal eeg;
  Envelope e1;
  Envelope e2;
  std::vector<Speaker> attention;  // per sample; empty when ground truth is unknown
};

// Reads a scene directory (scene.json, eeg.bin, envelopes.bin, attention.csv).
// Throws FormatError for malformed headers, truncated binaries (with the byte
// offset) and rate mismatches against expected_rate.
Recording ingest_recording(const std::filesystem::path& dir, double expected_rate = 64.0);

Recording from_scene(const synth::Scene& scene);

struct Split {
  std::vector<std::size_t> train;  // condition indices
  std::size_t test = 0;
};

// One split per condition, training on all the others. Needs >= 2 conditions.
std::vector<Split> split_leave_one_condition_out(std::size_t condition_count);

// 100 * matches / length.
double decoding_performance(std::span<const Speaker> decisions, std::span<const Speaker> truth);

// Ground-truth label of each correlation window: the label at its middle sample.
std::vector<Speaker> window_labels(std::span<const Speaker> per_sample, const WindowSpec& spec, std::size_t count);

enum class Decoder { LS, NN };

struct Method {
  Decoder decoder = Decoder::LS;
  bool ssm = false;

  std::string name() const;  // "LS", "NN", "LS-SSM", "NN-SSM"
  static Method parse(const std::string& name);
};

struct ConditionSource {
  std::string tag;
  std::optional<std::filesystem::path> scene_dir;
  std::optional<synth::SceneConfig> synth;
};

struct ExperimentConfig {
  std::vector<ConditionSource> conditions;
  std::vector<Method> methods{{Decoder::LS, false}, {Decoder::LS, true}};

  double rate = 64.0;        // decoder rate after preprocessing
  double input_rate = 64.0;  // sampling rate recordings must arrive at
  int delta = 20;
  double window_s = 5.0;
  double overlap_s = 4.5;
  int cv_folds = 10;

  int beta_count = 13;
  double beta_min_exp = -6.0;
  double beta_max_exp = 6.0;
  // "per-split" cross-validates on each training set; "fixed" uses fixed_beta.
  std::string beta_selection = "per-split";
  double fixed_beta = 1.0;

  dsp::EegPreprocessing preprocessing;
  bool standardize = true;  // remove channel means, scale the recording to unit RMS

  ssm::OnlineConfig ssm;
  nn::TrainConfig nn;

  std::uint64_t seed = 1;
  int threads = 0;  // 0: AADKIT_THREADS or hardware concurrency
  std::filesystem::path output_dir;

  void check() const;
  WindowSpec window_spec() const { return WindowSpec::from_seconds(window_s, overlap_s, rate); }
};

ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const ExperimentConfig& cfg);

// Four-condition synthetic suite sharing one listener (kernel seed).
struct SuiteOptions {
  std::uint64_t seed = 1;
  double duration_s = 240.0;
  int channels = 16;
  // Tuned so raw LS lands near 70-75% with 5 s windows.
  double base_noise_std = 66.0;
  double nonlinearity_mix = 0.0;
  double tracking_modulation = 3.0;
  double tracking_timescale_s = 2.0;
  std::vector<double> switch_times_s;
};
SuiteOptions suite_options_from_json(const nlohmann::json& j);
std::vector<ConditionSource> synthetic_suite(const SuiteOptions& options);

// Recording after preprocessing, standardization and lag expansion.
struct PreparedRecording {
  std::string condition;
  LagMatrix lag;
  Envelope e1;        // truncated to lag rows
  Envelope e2;
  Envelope attended;  // follows the attention labels; empty without truth
  std::vector<Speaker> attention;
};

PreparedRecording prepare(const Recording& rec, const ExperimentConfig& cfg);

// Contiguous folds over the concatenated training timeline.
std::vector<Fold> make_folds(std::span<const PreparedRecording* const> recordings, int k);

struct LsTraining {
  ls::LinearEstimator estimator;
  ls::BetaSearch search;
};
LsTraining train_ls(std::span<const PreparedRecording* const> recordings, const ExperimentConfig& cfg);

struct NnTraining {
  nn::ConvEstimator net;
  std::vector<double> loss_trace;
  int selected_iteration = 0;
};
// The last fold validates (early stopping); the others train.
NnTraining train_nn(std::span<const PreparedRecording* const> recordings, const ExperimentConfig& cfg,
                    std::uint64_t seed);

struct DecodeOutcome {
  CorrelationSeries series;
  std::vector<Speaker> truth;  // per window
  std::vector<Speaker> raw_decisions;
  double raw_performance = 0.0;
  std::optional<ssm::OnlineTrace> ssm_trace;
  double ssm_performance = 0.0;
  std::vector<std::uint8_t> raw_correct;
  std::vector<std::uint8_t> ssm_correct;
};

// Windowed correlations, instantaneous decisions and optionally the
// state-space smoother, scored against the recording's labels.
DecodeOutcome evaluate_reconstruction(const Envelope& reconstruction, const PreparedRecording& rec,
                                      const ExperimentConfig& cfg, bool run_ssm);

struct MethodResult {
  std::string method;
  std::string condition;
  double decoding_performance = 0.0;
  std::size_t decisions = 0;
  std::vector<std::uint8_t> correct;  // per decided window
};

struct CorrelationResult {
  std::string decoder;
  std::string condition;
  SummaryStats attended;
  SummaryStats unattended;
  std::vector<double> rho_attended;
  std::vector<double> rho_unattended;
};

struct SplitInfo {
  std::size_t id = 0;
  std::string test_condition;
  std::vector<std::string> train_conditions;
  std::optional<double> beta;
  std::optional<int> nn_selected_iteration;
};

struct EvaluationReport {
  nlohmann::json config;
  std::vector<SplitInfo> splits;
  std::vector<MethodResult> results;
  std::vector<CorrelationResult> correlations;
  std::string timestamp;
  double runtime_s = 0.0;

  const MethodResult* find(const std::string& method, const std::string& condition) const;
  // Median of per-condition decoding performance for one method.
  double median_performance(const std::string& method) const;
};

// A pipeline stage failed. `partial` holds results of the splits that completed.
class ExperimentError : public Error {
 public:
  ExperimentError(const std::string& stage, std::size_t split, const std::string& what, EvaluationReport partial);
  const std::string& stage() const noexcept { return stage_; }
  std::size_t split() const noexcept { return split_; }
  const EvaluationReport& partial() const noexcept { return partial_; }

 private:
  std::string stage_;
  std::size_t split_;
  EvaluationReport partial_;
};

EvaluationReport run_experiment(const ExperimentConfig& cfg);
EvaluationReport run_experiment(const ExperimentConfig& cfg, std::span<const Recording> recordings);

// Deterministic JSON; run metadata (timestamp, runtime) lives under "metadata" only.
nlohmann::json report_to_json(const EvaluationReport& report);

// report.json, performance.csv, boxplot.csv (quartiles per method/condition),
// correlations.csv and trials.csv (per-window correctness).
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);

// `requested` workers (hardware concurrency when <= 0), capped by AADKIT_THREADS when set.
int worker_count(int requested);

}  // namespace aadkit::harness
