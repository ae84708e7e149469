#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coce/rng.hpp"
#include "coce/types.hpp"

namespace coce {

/// One classification example: features X, label Y, and an optional
/// corruption-severity state S in {0, ..., s_max}.
struct LabeledExample {
  Vec features;
  int label = 0;
  std::optional<int> state;
};

struct Dataset {
  std::vector<LabeledExample> examples;
  int input_dim = 0;

  std::size_t size() const { return examples.size(); }
};

/// Synthetic state-corrupted Gaussian-cluster data.
///
/// Class means sit at class_separation times the vertices of a regular
/// simplex; clean features are unit-covariance Gaussians around them. Each
/// example draws a severity from a truncated Poisson(1) and, for s > 0,
/// adds Gaussian noise with per-coordinate std severity_noise_scale * s,
/// so high-severity states progressively destroy class separability.
struct DataConfig {
  int num_classes = 2;
  int input_dim = 2;
  int samples = 100;       // train + validation pool size
  int test_samples = -1;   // -1: defaults to samples / 4 (at least 1)
  double class_separation = 3.0;
  int s_max = 5;
  double severity_noise_scale = 0.75;
  bool drift_mode = false;  // train/val clean, test corrupted
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  int resolved_test_samples() const {
    return test_samples >= 0 ? test_samples : std::max(1, samples / 4);
  }
};

struct GeneratedData {
  Dataset train;
  Dataset val;
  Dataset test;
};

void validate(const DataConfig& cfg);

/// Severity draw: S = min(S_Pois, s_max) with S_Pois ~ Poisson(1), realized
/// by inverse-CDF over {0, ..., s_max - 1} with the remaining tail mass on
/// s_max.
int sample_severity(Rng& rng, int s_max);

/// P(S = s) under the truncated Poisson(1) severity law.
double severity_pmf(int s, int s_max);

/// Severity-scaled Gaussian corruption. s = 0 returns x unchanged
/// (bit-exact, no randomness consumed).
Vec corrupt(const Vec& x, int s, const DataConfig& cfg, Rng& rng);

/// Deterministic function of cfg (including seed).
GeneratedData generate_dataset(const DataConfig& cfg);

/// Seeded shuffle followed by a prefix split. Throws if either side would
/// be empty.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed);

/// CSV interchange: header `state,label,f0,...,f{d-1}`, one example per
/// row, floats at 17 significant digits, empty state cell for stateless
/// examples. A file whose header lacks the state column loads with all
/// states absent.
void save_csv(const Dataset& dataset, const std::string& path);
Dataset load_csv(const std::string& path);

}  // namespace coce
