#pragma once

#include "aadkit/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace aadkit::synth {

// Forward model:
//   eeg_c[k] = sum_tau h_c[tau] * ( g_att e_att[k-tau] + g_un e_un[k-tau]
//                                   + m g_att e_att[k-tau]^2 ) + noise_std * n_c[k]
// with h_c a raised-cosine bump of `kernel_taps` taps, a random per-channel
// delay in [0, max_delay] samples, random sign and amplitude in [0.5, 1.5].
struct SceneConfig {
  double duration_s = 240.0;
  double eeg_rate = 64.0;
  int channel_count = 16;
  int kernel_taps = 15;
  int max_delay = 10;
  double attended_gain = 1.0;
  double unattended_gain = 0.0;
  double noise_std = 1.0;
  double nonlinearity_mix = 0.0;  // m, in [0, 1]
  // Slow fluctuation of neural tracking: the attended drive is scaled by
  // max(0, 1 + tracking_modulation * u[k]), u a unit-variance AR(1) process
  // with time constant tracking_timescale_s. 0 disables it.
  double tracking_modulation = 0.0;
  double tracking_timescale_s = 4.0;
  std::vector<double> switch_times_s;
  int initial_speaker = 1;
  std::uint64_t seed = 1;
  // Seed of the forward kernels ("the subject"); 0 means use `seed`.
  // Scenes sharing a kernel seed are recordings of the same listener.
  std::uint64_t kernel_seed = 0;
  std::string condition_tag = "anechoic";

  void check() const;
  std::uint64_t effective_kernel_seed() const noexcept { return kernel_seed != 0 ? kernel_seed : seed; }
};

struct Scene {
  Envelope e1;
  Envelope e2;
  std::vector<Speaker> attention;  // one label per sample
  MultichannelSignal eeg;
  SceneConfig config;
  double achieved_snr = 0.0;  // RMS(attended contribution) / RMS(noise); inf when noiseless
};

// Rectified band-limited Gaussian noise: 2-8 Hz band-pass, full-wave
// rectification, 2-8 Hz band-pass again, shifted to a zero minimum and
// scaled to unit RMS.
// Needs duration * rate >= 2 and rate > 16 Hz.
Envelope generate_envelope(double duration_s, double rate, std::uint64_t seed);

// Forward kernels of the scene's listener, one row per channel.
RowMatrix forward_kernels(const SceneConfig& cfg);

Scene generate_scene(const SceneConfig& cfg);

// Preset (unattended gain, noise std) per condition tag, ordered by difficulty:
// anechoic < reverberant < anechoic-noisy < reverberant-noisy.
SceneConfig condition_preset(const std::string& tag, std::uint64_t seed, double base_noise_std = 1.0);
std::vector<std::string> default_condition_tags();

// Directory layout: scene.json, eeg.bin (float64 LE, channel-major),
// envelopes.bin (e1 then e2, float64 LE), attention.csv (sample,speaker).
void save_scene(const Scene& scene, const std::filesystem::path& dir);

nlohmann::json to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const nlohmann::json& j);

}  // namespace aadkit::synth
