#pragma once

// Ablation grid: the four {sensor tokens} x {mixed sampling} cells plus a
// sigma sweep, each trained over several seeds and scored by held-out
// zero-shot material accuracy.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "touchbind/eval.hpp"
#include "touchbind/trainer.hpp"

namespace touchbind {

struct AblationCell {
  std::string id;
  bool use_sensor_tokens = true;
  bool use_mix_sampling = true;
  double sigma = 0.75;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<double> sigmas{0.0, 0.5, 0.75, 1.0};
  int jobs = 1;
  std::string template_text = std::string(kDefaultTemplate);
};

struct CellResult {
  AblationCell cell;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracy;  // NaN where the run failed
  std::vector<double> val_loss;
  std::vector<std::string> errors;
  double median_accuracy = std::nan("");
  double median_val_loss = std::nan("");
};

struct AblationReport {
  std::vector<CellResult> cells;
  int scheduled_runs = 0;
  int distinct_runs = 0;

  const CellResult& at(const std::string& id) const {
    for (const auto& c : cells)
      if (c.cell.id == id) return c;
    throw ValidationError("ablation report has no cell '" + id + "'");
  }
};

/// Median of the finite entries; NaN when there are none.
inline double median_of(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string sigma_cell_id(double sigma) {
  std::ostringstream os;
  os << "sigma_" << sigma;
  return os.str();
}

inline std::vector<AblationCell> ablation_cells(double base_sigma, const std::vector<double>& sigmas) {
  std::vector<AblationCell> cells{{"baseline", false, false, base_sigma},
                                  {"tokens", true, false, base_sigma},
                                  {"sampling", false, true, base_sigma},
                                  {"full", true, true, base_sigma}};
  for (double s : sigmas) cells.push_back({sigma_cell_id(s), true, true, s});
  return cells;
}

struct AblationRun {
  double accuracy = std::nan("");
  double val_loss = std::nan("");
  std::string error;
};

/// Trains one configuration and scores it on the test split.
inline AblationRun run_ablation_cell(const Dataset& ds, const AnchorSpace& anchor, const EncoderConfig& encoder,
                                     const TrainConfig& cfg, std::string_view template_text) {
  AblationRun r;
  try {
    const Checkpoint ck = fit(ds, anchor, encoder, cfg);
    const SplitEmbeddings test = embed_split(ck, ds, Split::kTest);
    const auto labels = material_labels(ds, test.samples);
    PromptTemplateRegistry registry;
    r.accuracy = zero_shot_accuracy(test.touch, labels, anchor, template_text, registry);
    r.val_loss = ck.metrics.at("val_loss").get<double>();
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

/// Schedules cells x seeds, trains every distinct configuration once (cells
/// that coincide, e.g. the base-sigma sweep point and "full", share runs) on
/// up to `jobs` threads, and collects per-seed accuracies and medians.
inline AblationReport run_ablation_grid(const Dataset& ds, const AnchorSpace& anchor, const EncoderConfig& encoder,
                                        const TrainConfig& base, const AblationOptions& options = {}) {
  require(ds.manifest.datasets.size() >= 2, "ablation: needs a multi-sensor manifest");
  require(!options.seeds.empty(), "ablation: no seeds");
  base.validate();
  AblationReport report;
  std::vector<TrainConfig> distinct;
  std::vector<std::vector<std::size_t>> run_of;  // [cell][seed] -> distinct index
  const auto cells = ablation_cells(base.sigma, options.sigmas);
  for (const auto& cell : cells) {
    std::vector<std::size_t> row;
    for (std::uint64_t seed : options.seeds) {
      TrainConfig cfg = base;
      cfg.use_sensor_tokens = cell.use_sensor_tokens;
      cfg.use_mix_sampling = cell.use_mix_sampling;
      cfg.sigma = cell.sigma;
      cfg.seed = seed;
      cfg.checkpoint_every_epochs = 0;
      const auto it = std::find(distinct.begin(), distinct.end(), cfg);
      row.push_back(static_cast<std::size_t>(it - distinct.begin()));
      if (it == distinct.end()) distinct.push_back(cfg);
      ++report.scheduled_runs;
    }
    run_of.push_back(std::move(row));
  }
  report.distinct_runs = static_cast<int>(distinct.size());

  std::vector<AblationRun> runs(distinct.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < distinct.size(); i = next++) {
      runs[i] = run_ablation_cell(ds, anchor, encoder, distinct[i], options.template_text);
      std::lock_guard lock(log_mu);
      log_info("ablation run " + std::to_string(i + 1) + "/" + std::to_string(distinct.size()) +
               (runs[i].error.empty() ? " accuracy " + std::to_string(runs[i].accuracy) : " failed: " + runs[i].error));
    }
  };
  const int jobs = std::clamp(options.jobs, 1, static_cast<int>(distinct.size()));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t c = 0; c < cells.size(); ++c) {
    CellResult res;
    res.cell = cells[c];
    res.seeds = options.seeds;
    for (std::size_t s = 0; s < options.seeds.size(); ++s) {
      const AblationRun& run = runs[run_of[c][s]];
      res.accuracy.push_back(run.accuracy);
      res.val_loss.push_back(run.val_loss);
      res.errors.push_back(run.error);
    }
    res.median_accuracy = median_of(res.accuracy);
    res.median_val_loss = median_of(res.val_loss);
    report.cells.push_back(std::move(res));
  }
  return report;
}

namespace detail {
inline json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
}  // namespace detail

inline json ablation_report_json(const AblationReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json acc = json::array(), loss = json::array(), errs = json::array();
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      acc.push_back(detail::finite_or_null(c.accuracy[i]));
      loss.push_back(detail::finite_or_null(c.val_loss[i]));
      errs.push_back(c.errors[i].empty() ? json(nullptr) : json(c.errors[i]));
    }
    cells.push_back({{"cell", c.cell.id},
                     {"use_sensor_tokens", c.cell.use_sensor_tokens},
                     {"use_mix_sampling", c.cell.use_mix_sampling},
                     {"sigma", c.cell.sigma},
                     {"seeds", c.seeds},
                     {"accuracy", acc},
                     {"val_loss", loss},
                     {"errors", errs},
                     {"median_accuracy", detail::finite_or_null(c.median_accuracy)},
                     {"median_val_loss", detail::finite_or_null(c.median_val_loss)}});
  }
  return json{{"metric", "zero_shot_accuracy"},
              {"scheduled_runs", r.scheduled_runs},
              {"distinct_runs", r.distinct_runs},
              {"cells", cells}};
}

/// One row per (cell, seed).
inline std::string ablation_report_csv(const AblationReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "cell,use_sensor_tokens,use_mix_sampling,sigma,seed,accuracy,val_loss,median_accuracy\n";
  for (const auto& c : r.cells) {
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      os << c.cell.id << ',' << c.cell.use_sensor_tokens << ',' << c.cell.use_mix_sampling << ',' << c.cell.sigma
         << ',' << c.seeds[i] << ',' << c.accuracy[i] << ',' << c.val_loss[i] << ',' << c.median_accuracy << '\n';
    }
  }
  return os.str();
}

/// Accuracy-vs-sigma line plot of the sweep cells (median with per-seed dots).
inline std::string sigma_sweep_svg(const AblationReport& r) {
  std::vector<const CellResult*> pts;
  for (const auto& c : r.cells)
    if (c.cell.id.rfind("sigma_", 0) == 0) pts.push_back(&c);
  std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->cell.sigma < b->cell.sigma; });
  const double w = 480, h = 320, left = 60, right = 20, top = 30, bottom = 50;
  auto px = [&](double s) { return left + s * (w - left - right); };
  auto py = [&](double a) { return top + (1.0 - a) * (h - top - bottom); };
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\">zero-shot accuracy vs sigma</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << w - right << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double a = t / 4.0, s = t / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(a) + 4 << "\" text-anchor=\"end\">" << a << "</text>\n";
    os << "<text x=\"" << px(s) << "\" y=\"" << py(0) + 18 << "\" text-anchor=\"middle\">" << s << "</text>\n";
  }
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">sigma</text>\n";
  std::string path;
  for (const auto* c : pts) {
    if (!std::isfinite(c->median_accuracy)) continue;
    path += (path.empty() ? "M" : " L") + std::to_string(px(c->cell.sigma)) + "," + std::to_string(py(c->median_accuracy));
    for (double a : c->accuracy)
      if (std::isfinite(a))
        os << "<circle cx=\"" << px(c->cell.sigma) << "\" cy=\"" << py(a) << "\" r=\"2.5\" fill=\"#999\"/>\n";
  }
  if (!path.empty()) os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
  for (const auto* c : pts)
    if (std::isfinite(c->median_accuracy))
      os << "<circle cx=\"" << px(c->cell.sigma) << "\" cy=\"" << py(c->median_accuracy) << "\" r=\"4\" fill=\"#1f77b4\"/>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace touchbind
