#include "pcd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "pcd/format.hpp"
#include "pcd/transport.hpp"

namespace pcd {
namespace {

using nlohmann::json;

constexpr std::size_t kW1Subsample = 100;
constexpr std::size_t kW1Draws = 5;

void negate(ad::MlpGradients& g) {
  for (auto& w : g.weights) {
    for (double& v : w.data) v = -v;
  }
  for (auto& b : g.biases) {
    for (double& v : b) v = -v;
  }
}

// Rows of `m` picked by a partial Fisher-Yates shuffle.
Matrix subsample_rows(const Matrix& m, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(m.rows);
  std::iota(idx.begin(), idx.end(), 0);
  Matrix out(count, m.cols);
  for (std::size_t k = 0; k < count; ++k) {
    std::swap(idx[k], idx[k + uniform_index(rng, m.rows - k)]);
    std::copy_n(m.row(idx[k]).begin(), m.cols, out.row(k).begin());
  }
  return out;
}

// --- strict JSON helpers ---------------------------------------------------

void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error("config: " + where + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) throw Error("config: unknown key '" + item.key() + "' in " + where);
  }
}

void read_real(const json& j, const char* key, double& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_number()) throw Error(std::string("config: '") + key + "' must be a number");
  out = j[key].get<double>();
}

template <typename T>
void read_count(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_number_unsigned()) throw Error(std::string("config: '") + key + "' must be a nonnegative integer");
  out = j[key].get<T>();
}

void read_bool(const json& j, const char* key, bool& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_boolean()) throw Error(std::string("config: '") + key + "' must be true or false");
  out = j[key].get<bool>();
}

void read_widths(const json& j, const char* key, std::vector<std::size_t>& out) {
  if (!j.contains(key)) return;
  if (!j[key].is_array()) throw Error(std::string("config: '") + key + "' must be an array");
  out.clear();
  for (const auto& v : j[key]) {
    if (!v.is_number_unsigned()) throw Error(std::string("config: '") + key + "' entries must be integers");
    out.push_back(v.get<std::size_t>());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Datasets

void DatasetSpec::validate() const {
  if (kind != "ring8" && kind != "grid25") throw Error("unknown dataset kind '" + kind + "'");
  if (!(scale > 0.0)) throw Error("dataset: scale must be positive");
  if (!(noise_std >= 0.0)) throw Error("dataset: noise_std must be nonnegative");
}

std::vector<Vector> dataset_centers(const DatasetSpec& spec) {
  spec.validate();
  std::vector<Vector> c;
  if (spec.kind == "ring8") {
    for (int k = 0; k < 8; ++k) {
      const double a = 2.0 * std::numbers::pi * k / 8.0;
      c.push_back({spec.scale * std::cos(a), spec.scale * std::sin(a)});
    }
  } else {
    for (int i = -2; i <= 2; ++i) {
      for (int j = -2; j <= 2; ++j) c.push_back({spec.scale * i, spec.scale * j});
    }
  }
  return c;
}

Matrix sample_points(const DatasetSpec& spec, std::size_t count, Rng& rng) {
  const auto centers = dataset_centers(spec);
  Matrix out(count, 2);
  for (std::size_t r = 0; r < count; ++r) {
    const Vector& c = centers[uniform_index(rng, centers.size())];
    for (std::size_t d = 0; d < 2; ++d) out(r, d) = c[d] + spec.noise_std * gaussian(rng);
  }
  return out;
}

EmpiricalDistribution sample_dataset(const DatasetSpec& spec, std::size_t count) {
  if (count < 1) throw Error("sample_dataset: count must be >= 1");
  Rng rng(derive_seed(spec.seed, "dataset"));
  return make_empirical(sample_points(spec, count, rng));
}

ModeCoverage mode_coverage(const EmpiricalDistribution& fake, const std::vector<Vector>& centers,
                           double radius) {
  if (!(radius > 0.0)) throw Error("mode_coverage: radius must be positive");
  std::vector<char> hit(centers.size(), 0);
  double good = 0.0;
  for (std::size_t i = 0; i < fake.size(); ++i) {
    bool near = false;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (distance(fake.point(i), centers[c]) <= radius) {
        hit[c] = 1;
        near = true;
      }
    }
    if (near) good += fake.weight(i);
  }
  ModeCoverage m;
  m.covered = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
  m.hq_fraction = std::min(good, 1.0);
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(p >= 1.0)) throw Error("config: p must be >= 1");
  if (!(K > 0.0)) throw Error("config: K must be positive");
  if (n < 1 || z_dim < 1 || n_dis < 1 || steps < 1 || batch_size < 1 || eval_every < 1) {
    throw Error("config: counts must be positive");
  }
  if (eval_samples < kW1Subsample) throw Error("config: eval_samples must be >= 100");
  if (!(r1_gamma >= 0.0)) throw Error("config: r1_gamma must be >= 0");
  if (!(adam.lr >= 0.0) || !(adam.eps > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw Error("config: invalid Adam hyperparameters");
  }
  for (std::size_t h : generator_hidden) {
    if (h < 1) throw Error("config: zero-width generator layer");
  }
  for (std::size_t h : critic_hidden) {
    if (h < 1) throw Error("config: zero-width critic layer");
  }
  dataset.validate();
  if (!(dataset.noise_std > 0.0)) throw Error("config: dataset noise_std must be positive for training");
}

TrainConfig parse_train_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: malformed JSON: ") + e.what());
  }
  only_keys(j,
            {"p", "n", "K", "srvt", "generator", "critic", "n_dis", "steps", "batch_size", "adam", "r1_gamma",
             "seed", "dataset", "eval_every", "eval_samples", "wall_clock_in_metrics"},
            "config");
  TrainConfig c;
  read_real(j, "p", c.p);
  read_count(j, "n", c.n);
  read_real(j, "K", c.K);
  read_bool(j, "srvt", c.srvt);
  if (j.contains("generator")) {
    only_keys(j["generator"], {"z_dim", "hidden"}, "generator");
    read_count(j["generator"], "z_dim", c.z_dim);
    read_widths(j["generator"], "hidden", c.generator_hidden);
  }
  if (j.contains("critic")) {
    only_keys(j["critic"], {"hidden"}, "critic");
    read_widths(j["critic"], "hidden", c.critic_hidden);
  }
  read_count(j, "n_dis", c.n_dis);
  read_count(j, "steps", c.steps);
  read_count(j, "batch_size", c.batch_size);
  if (j.contains("adam")) {
    only_keys(j["adam"], {"lr", "beta1", "beta2", "eps"}, "adam");
    read_real(j["adam"], "lr", c.adam.lr);
    read_real(j["adam"], "beta1", c.adam.beta1);
    read_real(j["adam"], "beta2", c.adam.beta2);
    read_real(j["adam"], "eps", c.adam.eps);
  }
  read_real(j, "r1_gamma", c.r1_gamma);
  read_count(j, "seed", c.seed);
  if (j.contains("dataset")) {
    only_keys(j["dataset"], {"kind", "scale", "noise_std"}, "dataset");
    if (j["dataset"].contains("kind")) {
      if (!j["dataset"]["kind"].is_string()) throw Error("config: dataset kind must be a string");
      c.dataset.kind = j["dataset"]["kind"].get<std::string>();
    }
    read_real(j["dataset"], "scale", c.dataset.scale);
    read_real(j["dataset"], "noise_std", c.dataset.noise_std);
  }
  read_count(j, "eval_every", c.eval_every);
  read_count(j, "eval_samples", c.eval_samples);
  read_bool(j, "wall_clock_in_metrics", c.wall_clock_in_metrics);
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string train_config_json(const TrainConfig& c) {
  json j;
  j["p"] = c.p;
  j["n"] = c.n;
  j["K"] = c.K;
  j["srvt"] = c.srvt;
  j["generator"] = {{"z_dim", c.z_dim}, {"hidden", c.generator_hidden}};
  j["critic"] = {{"hidden", c.critic_hidden}};
  j["n_dis"] = c.n_dis;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["adam"] = {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  j["r1_gamma"] = c.r1_gamma;
  j["seed"] = c.seed;
  j["dataset"] = {{"kind", c.dataset.kind}, {"scale", c.dataset.scale}, {"noise_std", c.dataset.noise_std}};
  j["eval_every"] = c.eval_every;
  j["eval_samples"] = c.eval_samples;
  j["wall_clock_in_metrics"] = c.wall_clock_in_metrics;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Training

TrainState init_training(const TrainConfig& cfg) {
  cfg.validate();
  tune_allocator();
  Rng g_rng(derive_seed(cfg.seed, "generator-init"));
  Rng d_rng(derive_seed(cfg.seed, "critic-init"));
  TrainState s{cfg,
               ad::make_mlp(cfg.z_dim, cfg.generator_hidden, 2, false, g_rng),
               make_critic(2, cfg.n, cfg.K, cfg.srvt, cfg.critic_hidden, d_rng),
               {},
               {},
               {},
               Rng(derive_seed(cfg.seed, "data")),
               Rng(derive_seed(cfg.seed, "noise"))};
  s.critic_norm = ad::refresh_spectral_state(s.critic.body, 1);
  s.g_adam = ad::make_adam(s.generator, cfg.adam);
  s.d_adam = ad::make_adam(s.critic.body, cfg.adam);
  return s;
}

Matrix sample_noise(std::size_t rows, std::size_t z_dim, Rng& rng) {
  Matrix z(rows, z_dim);
  for (double& v : z.data) v = gaussian(rng);
  return z;
}

Matrix generate(const ad::Mlp& generator, const Matrix& z) {
  if (z.cols != generator.in_dim()) throw Error("generate: noise dimension mismatch");
  ad::Tape tape;
  const ad::MlpGraph g = ad::record_mlp(tape, generator, tape.leaf_ref(z, false), {}, {false, true});
  return tape.take_value(g.output);
}

double discriminator_step(TrainState& s, const Matrix& real) {
  const TrainConfig& cfg = s.cfg;
  const Matrix fake = generate(s.generator, sample_noise(cfg.batch_size, cfg.z_dim, s.noise_rng));
  ObjectiveGraph og = record_objective(s.critic, {real, {}}, {fake, {}}, cfg.p, s.critic_norm);
  ad::NodeId ascend = og.objective;
  if (cfg.r1_gamma > 0.0) {
    const Vector w(real.rows, 1.0 / static_cast<double>(real.rows));
    const ad::NodeId r1 = record_r1_penalty(og.tape, s.critic, og.critic, w);
    ascend = og.tape.sub(ascend, og.tape.scale(r1, 0.5 * cfg.r1_gamma));
  }
  og.tape.backward(ascend);
  ad::MlpGradients grads = ad::take_gradients(og.tape, og.critic.body);
  negate(grads);
  ad::adam_step(s.d_adam, s.critic.body, grads);
  s.critic_norm = ad::refresh_spectral_state(s.critic.body, 1);
  return og.value();
}

namespace {

struct GeneratorGraph {
  ad::Tape tape;
  ad::MlpGraph gen;
  ad::NodeId loss = ad::kNoNode;
};

void record_generator_loss(GeneratorGraph& g, const CriticNetwork& critic,
                           std::span<const ad::SpectralEstimate> normalization, const ad::Mlp& generator,
                           const Matrix& z, double p) {
  ad::Tape& t = g.tape;
  g.gen = ad::record_mlp(t, generator, t.leaf_ref(z, false), {}, {true, true});
  const CriticGraph cg = record_critic(t, critic, g.gen.output, normalization, {false, true});
  ad::NodeId powered = t.row_norm(cg.output);
  if (p != 1.0) powered = t.power(powered, p);
  const ad::NodeId term = t.power(t.mean(powered), 1.0 / p, kRootFloor);
  g.loss = t.scale(term, -1.0);
}

}  // namespace

double generator_loss(const CriticNetwork& critic, std::span<const ad::SpectralEstimate> normalization,
                      const ad::Mlp& generator, const Matrix& z, double p) {
  GeneratorGraph g;
  record_generator_loss(g, critic, normalization, generator, z, p);
  return g.tape.scalar_value(g.loss);
}

double generator_step(TrainState& s) {
  const Matrix z = sample_noise(s.cfg.batch_size, s.cfg.z_dim, s.noise_rng);
  GeneratorGraph g;
  record_generator_loss(g, s.critic, s.critic_norm, s.generator, z, s.cfg.p);
  g.tape.backward(g.loss);
  const double loss = g.tape.scalar_value(g.loss);
  ad::adam_step(s.g_adam, s.generator, ad::take_gradients(g.tape, g.gen));
  return loss;
}

EvalBatches evaluation_batches(const TrainConfig& cfg, const ad::Mlp& generator, std::size_t step) {
  Rng rng(derive_seed(derive_seed(cfg.seed, "eval"), step));
  EvalBatches b;
  b.real = sample_points(cfg.dataset, cfg.eval_samples, rng);
  b.fake = generate(generator, sample_noise(cfg.eval_samples, cfg.z_dim, rng));
  return b;
}

MetricsRecord evaluate(const TrainState& s, std::size_t step, const EvalBatches& b) {
  const TrainConfig& cfg = s.cfg;
  MetricsRecord r;
  r.step = step;
  r.objective = critic_objective(s.critic, Batch{b.real, {}}, Batch{b.fake, {}}, cfg.p);
  Rng rng(derive_seed(derive_seed(cfg.seed, "eval-subsample"), step));
  double w1 = 0.0;
  for (std::size_t d = 0; d < kW1Draws; ++d) {
    const auto real = make_empirical(subsample_rows(b.real, kW1Subsample, rng));
    const auto fake = make_empirical(subsample_rows(b.fake, kW1Subsample, rng));
    w1 += wasserstein_exact(real, fake, 1.0).distance;
  }
  r.w1 = w1 / static_cast<double>(kW1Draws);
  const auto cov = mode_coverage(make_empirical(b.fake), dataset_centers(cfg.dataset), 3.0 * cfg.dataset.noise_std);
  r.modes = cov.covered;
  r.hq_frac = cov.hq_fraction;
  return r;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "step,objective,w1,modes,hq_frac,seconds\n";
  for (const auto& r : records) {
    out << r.step << ',' << format_exact(r.objective) << ',' << format_exact(r.w1) << ',' << r.modes << ','
        << format_exact(r.hq_frac) << ',' << format_exact(r.seconds) << '\n';
  }
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "step,objective,w1,modes,hq_frac,seconds") {
    throw Error(path + ": unexpected metrics header");
  }
  std::vector<MetricsRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 6) throw Error(path + ":" + std::to_string(line_no) + ": expected 6 columns");
    auto num = [&](const std::string& s) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != s.size()) {
        throw Error(path + ":" + std::to_string(line_no) + ": non-numeric cell '" + s + "'");
      }
      return v;
    };
    MetricsRecord r;
    r.step = static_cast<std::size_t>(num(cells[0]));
    r.objective = num(cells[1]);
    r.w1 = num(cells[2]);
    r.modes = static_cast<std::size_t>(num(cells[3]));
    r.hq_frac = num(cells[4]);
    r.seconds = num(cells[5]);
    out.push_back(r);
  }
  return out;
}

TrainResult train(const TrainConfig& cfg, const std::optional<std::string>& out_dir) {
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{{}, init_training(cfg)};
  TrainState& s = result.state;
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream(fs::path(*out_dir) / "config.json") << train_config_json(cfg);
  }
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (std::size_t d = 0; d < cfg.n_dis; ++d) {
      discriminator_step(s, sample_points(cfg.dataset, cfg.batch_size, s.data_rng));
    }
    generator_step(s);
    if (step % cfg.eval_every != 0 && step != cfg.steps) continue;
    const EvalBatches batches = evaluation_batches(cfg, s.generator, step);
    MetricsRecord rec = evaluate(s, step, batches);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cfg.wall_clock_in_metrics) rec.seconds = elapsed;
    result.records.push_back(rec);
    if (out_dir) {
      const auto file = fs::path(*out_dir) / ("samples_" + std::to_string(step) + ".csv");
      write_samples_csv(file.string(), make_empirical(batches.fake), false);
    }
  }
  if (out_dir) {
    const fs::path dir(*out_dir);
    write_metrics_csv((dir / "metrics.csv").string(), result.records);
    ad::write_checkpoint((dir / "checkpoint.bin").string(), {{"generator", s.generator}, {"critic", s.critic.body}});
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace pcd
