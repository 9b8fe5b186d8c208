#include "aadkit/synth.hpp"

#include "aadkit/binary_io.hpp"
#include "aadkit/dsp.hpp"
#include "aadkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace aadkit::synth {

namespace {

// Independent engine per (seed, stream) pair.
std::mt19937_64 stream_engine(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, 0x5eedu};
  return std::mt19937_64(seq);
}

enum Stream : std::uint32_t { kEnvelope = 1, kSpeaker1 = 2, kSpeaker2 = 3, kKernels = 4, kNoise = 5, kTracking = 6 };

double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

Envelope envelope_from_engine(std::size_t n, double rate, std::mt19937_64& rng) {
  // Extra lead-in absorbs filter start-up before the kept segment.
  const std::size_t lead = static_cast<std::size_t>(std::ceil(2.0 * rate));
  std::normal_distribution<double> gauss(0.0, 1.0);
  SampledSignal noise;
  noise.rate = rate;
  noise.samples.resize(n + lead);
  for (double& v : noise.samples) v = gauss(rng);
  auto band = dsp::filtfilt(dsp::design_butterworth_bandpass(3, 2.0, 8.0, rate), noise);
  for (double& v : band.samples) v = std::abs(v);
  // Rectification spreads power below 2 Hz; band-limit the modulation again
  // and lift it so its minimum is zero.
  auto modulation = dsp::filtfilt(dsp::design_butterworth_bandpass(3, 2.0, 8.0, rate), band);
  Envelope out;
  out.rate = rate;
  out.samples.assign(modulation.samples.begin() + static_cast<std::ptrdiff_t>(lead), modulation.samples.end());
  const double floor = *std::min_element(out.samples.begin(), out.samples.end());
  for (double& v : out.samples) v = std::max(v - floor, 0.0);
  const double r = rms(out.samples);
  if (r > 0.0)
    for (double& v : out.samples) v /= r;
  return out;
}

}  // namespace

void SceneConfig::check() const {
  if (!(duration_s > 0.0)) throw ParameterError("SceneConfig: duration must be positive");
  if (!(eeg_rate > 16.0)) throw ParameterError("SceneConfig: eeg_rate must exceed 16 Hz");
  if (channel_count < 1) throw ParameterError("SceneConfig: channel_count must be positive");
  if (kernel_taps < 1 || max_delay < 0) throw ParameterError("SceneConfig: invalid kernel geometry");
  if (attended_gain < 0.0 || unattended_gain < 0.0) throw ParameterError("SceneConfig: gains must be >= 0");
  if (noise_std < 0.0) throw ParameterError("SceneConfig: noise_std must be >= 0");
  if (tracking_modulation < 0.0) throw ParameterError("SceneConfig: tracking_modulation must be >= 0");
  if (!(tracking_timescale_s > 0.0)) throw ParameterError("SceneConfig: tracking_timescale_s must be > 0");
  if (!(nonlinearity_mix >= 0.0 && nonlinearity_mix <= 1.0))
    throw ParameterError("SceneConfig: nonlinearity_mix must lie in [0, 1]");
  if (initial_speaker != 1 && initial_speaker != 2) throw ParameterError("SceneConfig: initial_speaker must be 1 or 2");
  double prev = 0.0;
  for (double t : switch_times_s) {
    if (!(t > prev) || !(t < duration_s))
      throw ParameterError("SceneConfig: switch times must be strictly increasing within the duration");
    prev = t;
  }
}

Envelope generate_envelope(double duration_s, double rate, std::uint64_t seed) {
  if (!(rate > 16.0)) throw ParameterError("generate_envelope: rate must exceed 16 Hz");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
  if (n < 2) throw ParameterError("generate_envelope: need at least 2 samples");
  auto rng = stream_engine(seed, kEnvelope);
  return envelope_from_engine(n, rate, rng);
}

RowMatrix forward_kernels(const SceneConfig& cfg) {
  cfg.check();
  auto rng = stream_engine(cfg.effective_kernel_seed(), kKernels);
  std::uniform_int_distribution<int> delay(0, cfg.max_delay);
  std::uniform_real_distribution<double> amplitude(0.5, 1.5);
  std::bernoulli_distribution positive(0.5);
  const int len = cfg.kernel_taps + cfg.max_delay;
  RowMatrix h = RowMatrix::Zero(cfg.channel_count, len);
  for (int c = 0; c < cfg.channel_count; ++c) {
    const int d = delay(rng);
    const double a = amplitude(rng) * (positive(rng) ? 1.0 : -1.0);
    for (int t = 0; t < cfg.kernel_taps; ++t) {
      const double phase = 2.0 * std::numbers::pi * (t + 1) / (cfg.kernel_taps + 1);
      h(c, d + t) = a * 0.5 * (1.0 - std::cos(phase));
    }
  }
  return h;
}

Scene generate_scene(const SceneConfig& cfg) {
  cfg.check();
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.eeg_rate));
  if (n < 2) throw ParameterError("generate_scene: scene shorter than 2 samples");

  Scene scene;
  scene.config = cfg;
  {
    auto r1 = stream_engine(cfg.seed, kSpeaker1);
    auto r2 = stream_engine(cfg.seed, kSpeaker2);
    scene.e1 = envelope_from_engine(n, cfg.eeg_rate, r1);
    scene.e2 = envelope_from_engine(n, cfg.eeg_rate, r2);
  }

  scene.attention.resize(n);
  Speaker current = speaker_from_int(cfg.initial_speaker);
  std::size_t next_switch = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / cfg.eeg_rate;
    while (next_switch < cfg.switch_times_s.size() && t >= cfg.switch_times_s[next_switch]) {
      current = other(current);
      ++next_switch;
    }
    scene.attention[k] = current;
  }

  std::vector<double> tracking(n, 1.0);
  if (cfg.tracking_modulation > 0.0) {
    auto rng = stream_engine(cfg.seed, kTracking);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double a = std::exp(-1.0 / (cfg.tracking_timescale_s * cfg.eeg_rate));
    const double innovation = std::sqrt(1.0 - a * a);
    double u = gauss(rng);
    for (std::size_t k = 0; k < n; ++k) {
      tracking[k] = std::max(0.0, 1.0 + cfg.tracking_modulation * u);
      u = a * u + innovation * gauss(rng);
    }
  }

  std::vector<double> drive(n), attended_only(n);
  for (std::size_t k = 0; k < n; ++k) {
    const bool one = scene.attention[k] == Speaker::One;
    const double ea = one ? scene.e1.samples[k] : scene.e2.samples[k];
    const double eu = one ? scene.e2.samples[k] : scene.e1.samples[k];
    attended_only[k] = tracking[k] * cfg.attended_gain * (ea + cfg.nonlinearity_mix * ea * ea);
    drive[k] = attended_only[k] + cfg.unattended_gain * eu;
  }

  const RowMatrix h = forward_kernels(cfg);
  auto noise_rng = stream_engine(cfg.seed, kNoise);
  std::normal_distribution<double> gauss(0.0, 1.0);
  scene.eeg.rate = cfg.eeg_rate;
  scene.eeg.data.resize(cfg.channel_count, static_cast<Eigen::Index>(n));
  double signal_power = 0.0, noise_power = 0.0;
  for (int c = 0; c < cfg.channel_count; ++c) {
    for (std::size_t k = 0; k < n; ++k) {
      double response = 0.0, attended = 0.0;
      const std::size_t taps = std::min<std::size_t>(static_cast<std::size_t>(h.cols()), k + 1);
      for (std::size_t tau = 0; tau < taps; ++tau) {
        response += h(c, static_cast<Eigen::Index>(tau)) * drive[k - tau];
        attended += h(c, static_cast<Eigen::Index>(tau)) * attended_only[k - tau];
      }
      const double noise = cfg.noise_std * gauss(noise_rng);
      scene.eeg.data(c, static_cast<Eigen::Index>(k)) = response + noise;
      signal_power += attended * attended;
      noise_power += noise * noise;
    }
  }
  scene.achieved_snr =
      noise_power > 0.0 ? std::sqrt(signal_power / noise_power) : std::numeric_limits<double>::infinity();
  return scene;
}

std::vector<std::string> default_condition_tags() {
  return {"anechoic", "reverberant", "anechoic-noisy", "reverberant-noisy"};
}

SceneConfig condition_preset(const std::string& tag, std::uint64_t seed, double base_noise_std) {
  SceneConfig cfg;
  cfg.seed = seed;
  cfg.condition_tag = tag;
  if (tag == "anechoic") {
    cfg.unattended_gain = 0.0;
    cfg.noise_std = base_noise_std;
  } else if (tag == "reverberant") {
    cfg.unattended_gain = 0.05;
    cfg.noise_std = 1.05 * base_noise_std;
  } else if (tag == "anechoic-noisy") {
    cfg.unattended_gain = 0.1;
    cfg.noise_std = 1.1 * base_noise_std;
  } else if (tag == "reverberant-noisy") {
    cfg.unattended_gain = 0.15;
    cfg.noise_std = 1.15 * base_noise_std;
  } else {
    throw ParameterError("condition_preset: unknown condition tag '" + tag + "'");
  }
  return cfg;
}

nlohmann::json to_json(const SceneConfig& cfg) {
  nlohmann::json j;
  j["duration_s"] = cfg.duration_s;
  j["eeg_rate"] = cfg.eeg_rate;
  j["channel_count"] = cfg.channel_count;
  j["kernel_taps"] = cfg.kernel_taps;
  j["max_delay"] = cfg.max_delay;
  j["attended_gain"] = cfg.attended_gain;
  j["unattended_gain"] = cfg.unattended_gain;
  j["noise_std"] = cfg.noise_std;
  j["nonlinearity_mix"] = cfg.nonlinearity_mix;
  j["tracking_modulation"] = cfg.tracking_modulation;
  j["tracking_timescale_s"] = cfg.tracking_timescale_s;
  j["switch_times_s"] = cfg.switch_times_s;
  j["initial_speaker"] = cfg.initial_speaker;
  j["seed"] = cfg.seed;
  j["kernel_seed"] = cfg.kernel_seed;
  j["condition_tag"] = cfg.condition_tag;
  return j;
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig cfg;
  if (j.contains("condition_tag") && !j.contains("noise_std") && !j.contains("unattended_gain"))
    cfg = condition_preset(j.at("condition_tag").get<std::string>(), j.value("seed", cfg.seed),
                           j.value("base_noise_std", 1.0));
  try {
    cfg.duration_s = j.value("duration_s", cfg.duration_s);
    cfg.eeg_rate = j.value("eeg_rate", cfg.eeg_rate);
    cfg.channel_count = j.value("channel_count", cfg.channel_count);
    cfg.kernel_taps = j.value("kernel_taps", cfg.kernel_taps);
    cfg.max_delay = j.value("max_delay", cfg.max_delay);
    cfg.attended_gain = j.value("attended_gain", cfg.attended_gain);
    cfg.unattended_gain = j.value("unattended_gain", cfg.unattended_gain);
    cfg.noise_std = j.value("noise_std", cfg.noise_std);
    cfg.nonlinearity_mix = j.value("nonlinearity_mix", cfg.nonlinearity_mix);
    cfg.tracking_modulation = j.value("tracking_modulation", cfg.tracking_modulation);
    cfg.tracking_timescale_s = j.value("tracking_timescale_s", cfg.tracking_timescale_s);
    cfg.switch_times_s = j.value("switch_times_s", cfg.switch_times_s);
    cfg.initial_speaker = j.value("initial_speaker", cfg.initial_speaker);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.kernel_seed = j.value("kernel_seed", cfg.kernel_seed);
    cfg.condition_tag = j.value("condition_tag", cfg.condition_tag);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene config: ") + e.what());
  }
  cfg.check();
  return cfg;
}

void save_scene(const Scene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto n = scene.e1.size();
  nlohmann::json j;
  j["format"] = "aadkit-scene";
  j["version"] = 1;
  j["eeg_rate"] = scene.eeg.rate;
  j["envelope_rate"] = scene.e1.rate;
  j["channels"] = scene.eeg.channels();
  j["samples"] = n;
  j["seed"] = scene.config.seed;
  j["condition_tag"] = scene.config.condition_tag;
  j["dtype"] = "float64-le";
  j["eeg_layout"] = "channel-major";
  j["achieved_snr"] = std::isfinite(scene.achieved_snr) ? nlohmann::json(scene.achieved_snr) : nlohmann::json(nullptr);
  j["config"] = to_json(scene.config);
  io::write_json(dir / "scene.json", j);

  // RowMatrix storage is already channel-major.
  io::write_f64_le(dir / "eeg.bin",
                   std::span<const double>(scene.eeg.data.data(), static_cast<std::size_t>(scene.eeg.data.size())));
  std::vector<double> env;
  env.reserve(2 * n);
  env.insert(env.end(), scene.e1.samples.begin(), scene.e1.samples.end());
  env.insert(env.end(), scene.e2.samples.begin(), scene.e2.samples.end());
  io::write_f64_le(dir / "envelopes.bin", env);

  std::ofstream os(dir / "attention.csv");
  if (!os) throw Error("cannot write attention.csv in " + dir.string());
  os << "sample,speaker\n";
  for (std::size_t k = 0; k < scene.attention.size(); ++k) os << k << ',' << to_int(scene.attention[k]) << '\n';
}

}  // namespace aadkit::synth
