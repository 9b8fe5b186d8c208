#include "aadkit/error.hpp"
#include "aadkit/harness.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace aadkit;
using namespace aadkit::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("aadkit_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

synth::SceneConfig small_scene(std::uint64_t seed) {
  synth::SceneConfig cfg;
  cfg.duration_s = 40.0;
  cfg.channel_count = 3;
  cfg.noise_std = 0.5;
  cfg.seed = seed;
  cfg.switch_times_s = {20.0};
  return cfg;
}

// Four short conditions, all methods, a cheap network.
ExperimentConfig small_experiment() {
  SuiteOptions o;
  o.duration_s = 60.0;
  o.channels = 4;
  o.base_noise_std = 2.0;
  o.switch_times_s = {30.0};
  ExperimentConfig cfg;
  cfg.conditions = synthetic_suite(o);
  cfg.methods = {Method::parse("LS"), Method::parse("NN"), Method::parse("LS-SSM"), Method::parse("NN-SSM")};
  cfg.delta = 6;
  cfg.cv_folds = 4;
  cfg.nn.iterations = 40;
  cfg.nn.batch_samples = 640;
  cfg.nn.eval_every = 20;
  return cfg;
}

nlohmann::json without_metadata(nlohmann::json j) {
  j.erase("metadata");
  return j;
}

}  // namespace

TEST(HarnessSplits, LeaveOneConditionOut) {
  const auto four = split_leave_one_condition_out(4);
  ASSERT_EQ(four.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(four[i].test, i);
    ASSERT_EQ(four[i].train.size(), 3u);
    for (std::size_t c : four[i].train) EXPECT_NE(c, i);
    EXPECT_EQ(std::set<std::size_t>(four[i].train.begin(), four[i].train.end()).size(), 3u);
  }
  EXPECT_EQ(split_leave_one_condition_out(2).size(), 2u);
  EXPECT_THROW(split_leave_one_condition_out(1), ParameterError);
  EXPECT_THROW(split_leave_one_condition_out(0), ParameterError);
}

TEST(HarnessPerformance, Basics) {
  const std::vector<Speaker> truth{Speaker::One, Speaker::Two, Speaker::Two, Speaker::One};
  std::vector<Speaker> wrong;
  for (Speaker s : truth) wrong.push_back(other(s));
  EXPECT_EQ(decoding_performance(truth, truth), 100.0);
  EXPECT_EQ(decoding_performance(wrong, truth), 0.0);
  const std::vector<Speaker> half{Speaker::One, Speaker::One, Speaker::Two, Speaker::Two};
  EXPECT_EQ(decoding_performance(half, truth), 50.0);
  EXPECT_THROW(decoding_performance(std::vector<Speaker>{Speaker::One}, truth), ParameterError);
  EXPECT_THROW(decoding_performance(std::vector<Speaker>{}, std::vector<Speaker>{}), ParameterError);
}

TEST(HarnessPerformance, RandomDecisionsNearChance) {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.5);
  std::vector<Speaker> truth, guess;
  for (int i = 0; i < 10000; ++i) {
    truth.push_back(i % 2 ? Speaker::One : Speaker::Two);
    guess.push_back(coin(rng) ? Speaker::One : Speaker::Two);
  }
  EXPECT_NEAR(decoding_performance(guess, truth), 50.0, 1.5);
}

TEST(HarnessPerformance, PermutationInvariant) {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.5);
  std::vector<Speaker> truth, guess;
  for (int i = 0; i < 500; ++i) {
    truth.push_back(coin(rng) ? Speaker::One : Speaker::Two);
    guess.push_back(coin(rng) ? Speaker::One : Speaker::Two);
  }
  const double before = decoding_performance(guess, truth);
  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Speaker> t2, g2;
  for (std::size_t i : order) {
    t2.push_back(truth[i]);
    g2.push_back(guess[i]);
  }
  EXPECT_EQ(decoding_performance(g2, t2), before);
}

TEST(HarnessWindows, LabelAtMiddleSample) {
  std::vector<Speaker> labels(640, Speaker::One);
  for (std::size_t k = 300; k < labels.size(); ++k) labels[k] = Speaker::Two;
  const auto spec = WindowSpec::from_seconds(5.0, 4.5, 64.0);
  const auto w = window_labels(labels, spec, spec.window_count(labels.size()));
  ASSERT_EQ(w.size(), 11u);
  // Window k covers [32k, 32k + 320); its middle sample is 32k + 160.
  for (std::size_t k = 0; k < w.size(); ++k) EXPECT_EQ(w[k], 32 * k + 160 < 300 ? Speaker::One : Speaker::Two);
}

TEST(HarnessMethods, NamesRoundTrip) {
  for (const std::string name : {"LS", "NN", "LS-SSM", "NN-SSM"}) EXPECT_EQ(Method::parse(name).name(), name);
  EXPECT_THROW(Method::parse("CCA"), ParameterError);
}

TEST(HarnessIngest, SceneRoundTripIsBitExact) {
  const auto dir = scratch("roundtrip");
  const auto scene = synth::generate_scene(small_scene(3));
  synth::save_scene(scene, dir);
  const Recording rec = ingest_recording(dir);
  EXPECT_EQ(rec.eeg.data, scene.eeg.data);
  EXPECT_EQ(rec.e1.samples, scene.e1.samples);
  EXPECT_EQ(rec.e2.samples, scene.e2.samples);
  EXPECT_EQ(rec.attention, scene.attention);
  EXPECT_EQ(rec.condition, scene.config.condition_tag);
  EXPECT_EQ(rec.eeg.rate, 64.0);
  fs::remove_all(dir);
}

TEST(HarnessIngest, TruncatedEegReportsOffset) {
  const auto dir = scratch("truncated");
  synth::save_scene(synth::generate_scene(small_scene(3)), dir);
  const auto full = fs::file_size(dir / "eeg.bin");
  fs::resize_file(dir / "eeg.bin", full - 12);
  try {
    ingest_recording(dir);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), static_cast<long long>(full - 12));
  }
  fs::remove_all(dir);
}

TEST(HarnessIngest, RateMismatchAndBadHeader) {
  const auto dir = scratch("rate");
  synth::save_scene(synth::generate_scene(small_scene(3)), dir);
  EXPECT_THROW(ingest_recording(dir, 128.0), FormatError);
  {
    std::ofstream os(dir / "scene.json");
    os << "{\"format\": \"something-else\"}";
  }
  EXPECT_THROW(ingest_recording(dir), FormatError);
  {
    std::ofstream os(dir / "scene.json");
    os << "{ not json";
  }
  EXPECT_THROW(ingest_recording(dir), FormatError);
  EXPECT_THROW(ingest_recording(dir / "missing"), Error);
  fs::remove_all(dir);
}

TEST(HarnessIngest, MalformedAttentionCsv) {
  const auto dir = scratch("csv");
  synth::save_scene(synth::generate_scene(small_scene(3)), dir);
  {
    std::ofstream os(dir / "attention.csv");
    os << "sample,speaker\n0,1\n1,7\n";
  }
  EXPECT_THROW(ingest_recording(dir), FormatError);
  fs::remove_all(dir);
}

TEST(HarnessConfig, JsonRoundTripAndValidation) {
  const auto dir = scratch("config");
  synth::save_scene(synth::generate_scene(small_scene(4)), dir / "scene_a");
  const nlohmann::json j = {
      {"conditions",
       {{{"tag", "a"}, {"scene_dir", "scene_a"}}, {{"tag", "b"}, {"synth", synth::to_json(small_scene(5))}}}},
      {"methods", {"LS", "NN-SSM"}},
      {"delta", 8},
      {"window_s", 4.0},
      {"overlap_s", 3.5},
      {"seed", 11},
      {"ssm", {{"k_p", 2}, {"em_iterations", 10}}},
      {"nn", {{"filters", 3}, {"iterations", 7}}}};
  const ExperimentConfig cfg = config_from_json(j, dir);
  ASSERT_EQ(cfg.conditions.size(), 2u);
  EXPECT_EQ(*cfg.conditions[0].scene_dir, dir / "scene_a");
  EXPECT_TRUE(cfg.conditions[1].synth.has_value());
  EXPECT_EQ(cfg.methods.size(), 2u);
  EXPECT_EQ(cfg.delta, 8);
  EXPECT_EQ(cfg.ssm.k_p, 2);
  EXPECT_EQ(cfg.ssm.em_iterations, 10);
  EXPECT_EQ(cfg.nn.filters, 3);
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(to_json(config_from_json(to_json(cfg), dir)), to_json(cfg));

  EXPECT_THROW(config_from_json({{"conditions", {{{"tag", "a"}, {"scene_dir", "scene_a"}}}}, {"delta", "x"}}, dir),
               FormatError);
  EXPECT_THROW(config_from_json({{"conditions", {{{"tag", "a"}, {"scene_dir", "scene_a"}}}}, {"delta", -1}}, dir).check(),
               ParameterError);
  fs::remove_all(dir);
}

TEST(HarnessConfig, SuiteFromJson) {
  const ExperimentConfig cfg =
      config_from_json({{"synthetic_suite", {{"seed", 3}, {"duration_s", 90.0}, {"channels", 6}}}});
  ASSERT_EQ(cfg.conditions.size(), 4u);
  std::set<std::uint64_t> seeds;
  for (const auto& c : cfg.conditions) {
    ASSERT_TRUE(c.synth.has_value());
    EXPECT_EQ(c.synth->duration_s, 90.0);
    EXPECT_EQ(c.synth->channel_count, 6);
    EXPECT_EQ(c.synth->effective_kernel_seed(), cfg.conditions[0].synth->effective_kernel_seed());
    seeds.insert(c.synth->seed);
  }
  EXPECT_EQ(seeds.size(), 4u);
}

TEST(HarnessThreads, EnvironmentCap) {
  ::setenv("AADKIT_THREADS", "2", 1);
  EXPECT_EQ(worker_count(8), 2);
  EXPECT_EQ(worker_count(1), 1);
  ::unsetenv("AADKIT_THREADS");
  EXPECT_EQ(worker_count(3), 3);
  EXPECT_GE(worker_count(0), 1);
}

TEST(HarnessExperiment, ReportShapeAndConstants) {
  const ExperimentConfig cfg = small_experiment();
  const auto report = run_experiment(cfg);
  EXPECT_EQ(report.results.size(), 16u);
  EXPECT_EQ(report.splits.size(), 4u);
  for (const std::string m : {"LS", "NN", "LS-SSM", "NN-SSM"})
    for (const auto& c : cfg.conditions) {
      const MethodResult* r = report.find(m, c.tag);
      ASSERT_NE(r, nullptr) << m << " " << c.tag;
      EXPECT_GE(r->decoding_performance, 0.0);
      EXPECT_LE(r->decoding_performance, 100.0);
      EXPECT_EQ(r->correct.size(), r->decisions);
    }
  for (const auto& s : report.splits) {
    EXPECT_EQ(s.train_conditions.size(), 3u);
    for (const auto& t : s.train_conditions) EXPECT_NE(t, s.test_condition);
  }
  EXPECT_EQ(report.correlations.size(), 8u);

  const auto j = report_to_json(report);
  EXPECT_EQ(j["constants"]["delta"], 6);
  EXPECT_EQ(j["constants"]["correlation_window_s"], 5.0);
  EXPECT_EQ(j["constants"]["correlation_overlap_s"], 4.5);
  EXPECT_EQ(j["constants"]["cv_folds"], 4);
  EXPECT_EQ(j["constants"]["em_iterations"], 20);
  EXPECT_TRUE(j.contains("metadata"));

  const auto dir = scratch("report");
  write_report(report, dir);
  for (const char* f : {"report.json", "performance.csv", "boxplot.csv", "correlations.csv", "trials.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::ifstream is(dir / "performance.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "method,condition,decoding_performance,decisions");
  fs::remove_all(dir);
}

TEST(HarnessExperiment, DeterministicAcrossThreadCounts) {
  ExperimentConfig cfg = small_experiment();
  cfg.methods = {Method::parse("LS"), Method::parse("NN-SSM")};
  cfg.threads = 1;
  const auto a = report_to_json(run_experiment(cfg));
  cfg.threads = 3;
  const auto b = report_to_json(run_experiment(cfg));
  EXPECT_EQ(without_metadata(a).dump(), without_metadata(b).dump());
}

TEST(HarnessExperiment, StageErrorsCarrySplit) {
  ExperimentConfig cfg = small_experiment();
  cfg.methods = {Method::parse("LS")};
  cfg.conditions[2].synth->duration_s = 3.0;  // shorter than one correlation window
  cfg.conditions[2].synth->switch_times_s.clear();
  try {
    run_experiment(cfg);
    FAIL() << "expected ExperimentError";
  } catch (const ExperimentError& e) {
    EXPECT_FALSE(e.stage().empty());
    EXPECT_LT(e.split(), 4u);
  }
}

TEST(HarnessExperiment, InvalidConfig) {
  ExperimentConfig cfg = small_experiment();
  cfg.conditions.resize(1);
  EXPECT_THROW(run_experiment(cfg), ParameterError);
  cfg = small_experiment();
  cfg.overlap_s = 5.0;
  EXPECT_THROW(run_experiment(cfg), ParameterError);
}
