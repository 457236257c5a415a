// pcd: command-line front end for the discrepancy library.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "pcd/discrepancy.hpp"
#include "pcd/format.hpp"
#include "pcd/measures.hpp"
#include "pcd/report.hpp"
#include "pcd/srvt.hpp"
#include "pcd/trainer.hpp"
#include "pcd/transport.hpp"
#include "pcd/verify.hpp"

namespace {

using json = nlohmann::ordered_json;

std::string version_string() { return "pcd 1.0.0 (invariant suite " + pcd::verify::manifest_hash() + ")"; }

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    const unsigned long v = std::stoul(item, &pos);
    if (pos != item.size() || v == 0) throw pcd::Error("bad layer width '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw pcd::Error("empty layer list");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw pcd::Error("cannot write " + path);
  out << text;
}

struct WassersteinArgs {
  double p = 1.0;
  std::string left, right, plan;
  std::uint64_t seed = 0;
};

int run_wasserstein(const WassersteinArgs& a) {
  const auto P = pcd::read_samples_csv(a.left), Q = pcd::read_samples_csv(a.right);
  const auto t = pcd::wasserstein_exact(P, Q, a.p);
  std::cout << pcd::format_sig(t.distance, 12) << '\n';
  if (!a.plan.empty()) pcd::write_plan_csv(a.plan, t.plan);
  return 0;
}

struct SrvtArgs {
  bool inverse = false;
  std::string in, out;
  std::uint64_t seed = 0;
};

int run_srvt(const SrvtArgs& a) {
  const auto rows = pcd::read_samples_csv(a.in);
  pcd::Matrix out(rows.size(), rows.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const pcd::Vector y = a.inverse ? pcd::srvt_inverse(rows.point(i)) : pcd::srvt_forward(rows.point(i));
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  pcd::write_samples_csv(a.out, pcd::make_empirical(std::move(out)), false);
  std::cout << (a.inverse ? "inverted " : "transformed ") << rows.size() << " rows of dimension " << rows.dim()
            << '\n';
  return 0;
}

struct DiscrepancyArgs {
  std::string left, right, out, hidden = "128,128,128";
  pcd::DiscrepancyConfig cfg;
};

int run_discrepancy(DiscrepancyArgs a) {
  a.cfg.hidden = parse_widths(a.hidden);
  const auto P = pcd::read_samples_csv(a.left), Q = pcd::read_samples_csv(a.right);
  const auto est = pcd::estimate_discrepancy(P, Q, a.cfg);
  const auto& c = a.cfg;
  json j;
  j["value"] = est.value;
  j["best_step"] = est.best_step;
  j["trace"] = json::array();
  for (std::size_t k = 0; k < est.trace.size(); ++k) {
    j["trace"].push_back({{"step", est.trace_steps[k]}, {"objective", est.trace[k]}});
  }
  j["config"] = {{"p", c.p},        {"n", c.n},
                 {"K", c.K},        {"srvt", c.srvt},
                 {"steps", c.steps}, {"batch_size", c.batch_size},
                 {"seed", c.seed},  {"hidden", c.hidden},
                 {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
                 {"eval_every", c.eval_every}, {"left", a.left},
                 {"right", a.right}};
  j["certified_sigma"] = est.certified_sigma;
  write_text(a.out, j.dump(2) + "\n");
  std::cout << "L = " << pcd::format_sig(est.value, 12) << " (best step " << est.best_step << " of " << c.steps
            << ", " << pcd::format_sig(est.wall_time, 3) << " s)\n";
  return 0;
}

struct TrainArgs {
  std::string config, out_dir;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  pcd::TrainConfig cfg = pcd::read_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const auto result = pcd::train(cfg, a.out_dir);
  const auto& last = result.records.back();
  std::cout << "step " << last.step << ": objective " << pcd::format_sig(last.objective, 6) << ", w1 "
            << pcd::format_sig(last.w1, 6) << ", modes " << last.modes << ", hq_frac "
            << pcd::format_sig(last.hq_frac, 4) << " (" << pcd::format_sig(result.seconds, 4) << " s)\n";
  return 0;
}

struct VerifyArgs {
  std::string suite = "fast", out;
  std::uint64_t seed = 0;
};

int run_verify(const VerifyArgs& a) {
  pcd::verify::Options opts;
  opts.suite = pcd::verify::suite_from_string(a.suite);
  opts.seed = a.seed;
  const auto report = pcd::verify::run(opts);
  std::cout << pcd::verify::render_text(report);
  if (!a.out.empty()) write_text(a.out, pcd::verify::render_json(report));
  return report.pass() ? 0 : 1;
}

struct ReportArgs {
  std::string dir, out;
  std::uint64_t seed = 0;
};

int run_report(const ReportArgs& a) {
  const auto report = pcd::build_report(a.dir);
  if (!a.out.empty()) pcd::write_report_csv(a.out, report);
  std::cout << pcd::render_report(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximal p-centrality discrepancy: exact transport oracles, estimator, trainer"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  int status = 0;

  WassersteinArgs wa;
  auto* w = app.add_subcommand("wasserstein", "exact W_p between two sample files");
  w->add_option("--p", wa.p, "order p >= 1")->required();
  w->add_option("--left", wa.left, "samples CSV")->required()->check(CLI::ExistingFile);
  w->add_option("--right", wa.right, "samples CSV")->required()->check(CLI::ExistingFile);
  w->add_option("--plan", wa.plan, "write the optimal plan as i,j,mass");
  w->add_option("--seed", wa.seed, "unused; accepted for uniformity");
  w->callback([&] { status = run_wasserstein(wa); });

  SrvtArgs sa;
  auto* s = app.add_subcommand("srvt", "square-root velocity transform of every row");
  s->add_flag("--inverse", sa.inverse, "apply the inverse transform");
  s->add_option("--in", sa.in, "input CSV")->required()->check(CLI::ExistingFile);
  s->add_option("--out", sa.out, "output CSV")->required();
  s->add_option("--seed", sa.seed, "unused; accepted for uniformity");
  s->callback([&] { status = run_srvt(sa); });

  DiscrepancyArgs da;
  auto* d = app.add_subcommand("discrepancy", "estimate L_{p,n,K} between two sample files");
  d->add_option("--left", da.left, "samples of P")->required()->check(CLI::ExistingFile);
  d->add_option("--right", da.right, "samples of Q")->required()->check(CLI::ExistingFile);
  d->add_option("--p", da.cfg.p, "order p >= 1")->required();
  d->add_option("--n", da.cfg.n, "critic output dimension")->required();
  d->add_option("--K", da.cfg.K, "Lipschitz bound")->required();
  d->add_flag("--srvt", da.cfg.srvt, "end the critic with the SRVT block");
  d->add_option("--steps", da.cfg.steps, "ascent steps")->capture_default_str();
  d->add_option("--batch-size", da.cfg.batch_size, "batch size")->capture_default_str();
  d->add_option("--hidden", da.hidden, "hidden widths, comma separated")->capture_default_str();
  d->add_option("--lr", da.cfg.adam.lr, "Adam learning rate")->capture_default_str();
  d->add_option("--eval-every", da.cfg.eval_every, "steps between certified evaluations")->capture_default_str();
  d->add_option("--seed", da.cfg.seed, "seed")->capture_default_str();
  d->add_option("--out", da.out, "result JSON")->required();
  d->callback([&] { status = run_discrepancy(da); });

  TrainArgs ta;
  auto* t = app.add_subcommand("train", "adversarial training on a synthetic 2D target");
  t->add_option("--config", ta.config, "TrainConfig JSON")->required()->check(CLI::ExistingFile);
  t->add_option("--out-dir", ta.out_dir, "output directory")->required();
  t->add_option("--seed", ta.seed, "overrides the config seed");
  t->callback([&] { status = run_train(ta); });

  VerifyArgs va;
  auto* v = app.add_subcommand("verify", "run the invariant suite");
  v->add_option("--suite", va.suite, "fast or full")->check(CLI::IsMember({"fast", "full"}))->capture_default_str();
  v->add_option("--seed", va.seed, "seed")->capture_default_str();
  v->add_option("--out", va.out, "also write the report as JSON");
  v->callback([&] { status = run_verify(va); });

  ReportArgs ra;
  auto* r = app.add_subcommand("report", "merge training runs and compare configs");
  r->add_option("--dir", ra.dir, "directory of runs")->required()->check(CLI::ExistingDirectory);
  r->add_option("--out", ra.out, "consolidated CSV");
  r->add_option("--seed", ra.seed, "unused; accepted for uniformity");
  r->callback([&] { status = run_report(ra); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return status;
}
