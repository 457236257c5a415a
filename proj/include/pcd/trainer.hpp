#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pcd/autodiff.hpp"
#include "pcd/discrepancy.hpp"
#include "pcd/measures.hpp"

namespace pcd {

// ---------------------------------------------------------------------------
// Synthetic targets

struct DatasetSpec {
  std::string kind = "ring8";  // ring8 | grid25
  double scale = 2.0;          // ring radius or grid spacing
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

/// ring8: 8 centers on the circle of radius scale. grid25: 5x5 grid with
/// spacing scale, centered at the origin.
std::vector<Vector> dataset_centers(const DatasetSpec& spec);

/// `count` draws: uniform mode, then isotropic Gaussian noise.
Matrix sample_points(const DatasetSpec& spec, std::size_t count, Rng& rng);

/// Seeded from spec.seed.
EmpiricalDistribution sample_dataset(const DatasetSpec& spec, std::size_t count);

struct ModeCoverage {
  std::size_t covered = 0;   // centers with at least one sample within radius
  double hq_fraction = 0.0;  // samples within radius of some center
};

ModeCoverage mode_coverage(const EmpiricalDistribution& fake, const std::vector<Vector>& centers,
                           double radius);

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  double p = 1.0;
  std::size_t n = 1;
  double K = 1.0;
  bool srvt = false;
  std::size_t z_dim = 16;
  std::vector<std::size_t> generator_hidden{128, 128, 128};
  std::vector<std::size_t> critic_hidden{128, 128, 128};
  std::size_t n_dis = 5;
  std::size_t steps = 20000;  // generator steps
  std::size_t batch_size = 64;
  ad::AdamHyper adam;         // shared by both players
  double r1_gamma = 0.0;
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  std::size_t eval_every = 500;
  std::size_t eval_samples = 512;
  bool wall_clock_in_metrics = false;  // metrics.csv `seconds` is 0 unless set

  void validate() const;
};

/// Strict JSON reader: unknown keys and wrong types are errors, missing keys
/// keep their defaults.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig read_train_config(const std::string& path);
std::string train_config_json(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Training

struct MetricsRecord {
  std::size_t step = 0;
  double objective = 0.0;  // certified critic objective on the evaluation batches
  double w1 = 0.0;         // mean exact W1 over subsampled real/fake pairs
  std::size_t modes = 0;
  double hq_frac = 0.0;
  double seconds = 0.0;
};

struct TrainState {
  TrainConfig cfg;
  ad::Mlp generator;
  CriticNetwork critic;
  std::vector<ad::SpectralEstimate> critic_norm;  // normalization in force between steps
  ad::AdamState g_adam;
  ad::AdamState d_adam;
  Rng data_rng;
  Rng noise_rng;
};

TrainState init_training(const TrainConfig& cfg);

Matrix sample_noise(std::size_t rows, std::size_t z_dim, Rng& rng);
Matrix generate(const ad::Mlp& generator, const Matrix& z);

/// One ascent step of the critic on `real` against a fresh fake batch. Returns
/// the objective before the update. When r1_gamma > 0 the ascended quantity
/// is objective - 0.5 * r1_gamma * mean |grad_x |D(x)||^2 over the real rows.
/// The power-iteration state is refreshed after the update.
double discriminator_step(TrainState& state, const Matrix& real);

/// One descent step of the generator on -(E|D(G(z))|^p)^(1/p), critic frozen.
/// Returns the loss before the update.
double generator_step(TrainState& state);

/// Generator loss of a fixed batch under the given critic normalization.
double generator_loss(const CriticNetwork& critic, std::span<const ad::SpectralEstimate> normalization,
                      const ad::Mlp& generator, const Matrix& z, double p);

struct EvalBatches {
  Matrix real;
  Matrix fake;
};

/// Deterministic evaluation batches for `step` (a function of seed and step only).
EvalBatches evaluation_batches(const TrainConfig& cfg, const ad::Mlp& generator, std::size_t step);

/// Metrics of the current state at `step` (seconds left at 0).
MetricsRecord evaluate(const TrainState& state, std::size_t step, const EvalBatches& batches);

struct TrainResult {
  std::vector<MetricsRecord> records;
  TrainState state;
  double seconds = 0.0;  // wall time, never written to the output directory
};

/// Full run. With an output directory, writes config.json, metrics.csv,
/// samples_<step>.csv and checkpoint.bin; every file is a pure function of the
/// config unless wall_clock_in_metrics is set.
TrainResult train(const TrainConfig& cfg, const std::optional<std::string>& out_dir = std::nullopt);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

}  // namespace pcd
