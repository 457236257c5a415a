#include "pcd/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "pcd/format.hpp"

namespace pcd {
namespace {

namespace fs = std::filesystem;

std::string short_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
  return buf;
}

std::string base_label(const TrainConfig& cfg) {
  return "p=" + format_sig(cfg.p, 6) + " n=" + std::to_string(cfg.n) + " K=" + format_sig(cfg.K, 6) +
         " srvt=" + (cfg.srvt ? "on" : "off");
}

std::string opt_text(const std::optional<double>& v) { return v ? format_exact(*v) : ""; }

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw Error("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::optional<std::size_t> convergence_step(const std::vector<MetricsRecord>& records, double scale,
                                            std::size_t centers) {
  for (const auto& r : records) {
    if (r.w1 <= kConvergedW1 * scale && r.modes == centers) return r.step;
  }
  return std::nullopt;
}

RunReport build_report(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error("report: not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") files.push_back(entry.path());
  }
  if (files.empty()) throw Error("report: no metrics.csv under " + dir);
  std::sort(files.begin(), files.end());

  struct Loaded {
    RunSummary run;
    std::string key;
    TrainConfig cfg;
  };
  std::vector<Loaded> loaded;
  for (const auto& file : files) {
    const fs::path cfg_path = file.parent_path() / "config.json";
    if (!fs::exists(cfg_path)) throw Error("report: missing config.json next to " + file.string());
    Loaded l;
    l.cfg = read_train_config(cfg_path.string());
    const auto records = read_metrics_csv(file.string());
    if (records.empty()) throw Error("report: no rows in " + file.string());
    l.run.path = fs::relative(file.parent_path(), dir).generic_string();
    l.run.seed = l.cfg.seed;
    l.run.scale = l.cfg.dataset.scale;
    l.run.centers = dataset_centers(l.cfg.dataset).size();
    l.run.final = records.back();
    l.run.converged_at = convergence_step(records, l.run.scale, l.run.centers);
    TrainConfig unseeded = l.cfg;
    unseeded.seed = 0;
    l.key = train_config_json(unseeded);
    loaded.push_back(std::move(l));
  }

  // Labels name the headline knobs; configs that share them but differ
  // elsewhere get a hash suffix.
  std::map<std::string, std::vector<std::string>> keys_by_label;
  for (const auto& l : loaded) {
    auto& keys = keys_by_label[base_label(l.cfg)];
    if (std::find(keys.begin(), keys.end(), l.key) == keys.end()) keys.push_back(l.key);
  }
  for (auto& l : loaded) {
    const std::string label = base_label(l.cfg);
    l.run.group = keys_by_label[label].size() > 1 ? label + " [" + short_hash(l.key) + "]" : label;
  }
  std::sort(loaded.begin(), loaded.end(), [](const Loaded& a, const Loaded& b) {
    return std::tie(a.cfg.p, a.cfg.n, a.cfg.K, a.cfg.srvt, a.run.group, a.run.seed, a.run.path) <
           std::tie(b.cfg.p, b.cfg.n, b.cfg.K, b.cfg.srvt, b.run.group, b.run.seed, b.run.path);
  });

  RunReport report;
  for (const auto& l : loaded) report.runs.push_back(l.run);
  for (std::size_t i = 0; i < report.runs.size();) {
    std::size_t j = i;
    while (j < report.runs.size() && report.runs[j].group == report.runs[i].group) ++j;
    GroupSummary g;
    g.label = report.runs[i].group;
    g.runs = j - i;
    g.scale = report.runs[i].scale;
    g.centers = report.runs[i].centers;
    std::vector<double> obj, w1, modes, hq, conv;
    for (std::size_t k = i; k < j; ++k) {
      const auto& r = report.runs[k];
      obj.push_back(r.final.objective);
      w1.push_back(r.final.w1);
      modes.push_back(static_cast<double>(r.final.modes));
      hq.push_back(r.final.hq_frac);
      if (r.converged_at) conv.push_back(static_cast<double>(*r.converged_at));
    }
    g.objective = median(obj);
    g.w1 = median(w1);
    g.modes = median(modes);
    g.hq_frac = median(hq);
    g.converged_runs = conv.size();
    if (!conv.empty()) g.converged_at = median(conv);
    report.groups.push_back(std::move(g));
    i = j;
  }
  return report;
}

void write_report_csv(const std::string& path, const RunReport& report) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "kind,config,seed,path,runs,step,objective,w1,w1_over_scale,modes,hq_frac,converged_step\n";
  for (const auto& r : report.runs) {
    out << "run,\"" << r.group << "\"," << r.seed << ",\"" << r.path << "\",1," << r.final.step << ','
        << format_exact(r.final.objective) << ',' << format_exact(r.final.w1) << ','
        << format_exact(r.final.w1 / r.scale) << ',' << r.final.modes << ',' << format_exact(r.final.hq_frac)
        << ',' << (r.converged_at ? std::to_string(*r.converged_at) : "") << '\n';
  }
  for (const auto& g : report.groups) {
    out << "median,\"" << g.label << "\",,," << g.runs << ",," << format_exact(g.objective) << ','
        << format_exact(g.w1) << ',' << format_exact(g.w1 / g.scale) << ',' << format_exact(g.modes) << ','
        << format_exact(g.hq_frac) << ',' << opt_text(g.converged_at) << '\n';
  }
}

std::string render_report(const RunReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-34s %5s %11s %9s %7s %8s %10s %11s\n", "config", "runs", "objective", "w1/scale",
                "modes", "hq_frac", "converged", "conv_step");
  out << line;
  for (const auto& g : report.groups) {
    const std::string conv = std::to_string(g.converged_runs) + "/" + std::to_string(g.runs);
    const std::string step = g.converged_at ? format_sig(*g.converged_at, 6) : "-";
    std::snprintf(line, sizeof line, "%-34s %5zu %11.5f %9.4f %7.1f %8.4f %10s %11s\n", g.label.c_str(), g.runs,
                  g.objective, g.w1 / g.scale, g.modes, g.hq_frac, conv.c_str(), step.c_str());
    out << line;
  }
  out << "values are medians of each run's final evaluation; conv_step is the median first step with "
         "w1 <= "
      << format_sig(kConvergedW1, 3) << "*scale and every mode covered, over converged runs\n";
  return out.str();
}

}  // namespace pcd
