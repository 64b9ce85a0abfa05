#pragma once

// Serialization of simulator runs: JSONL step logs, a CSV comparison table
// and an SVG plot of mean training loss against step.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slap/errors.hpp"
#include "slap/sim.hpp"

namespace slap::sim {

using json = nlohmann::json;

inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline json step_record_json(const RunResult& r, const StepRecord& s) {
  json j;
  j["policy"] = std::string(policy_name(r.policy));
  j["keep_fraction"] = r.keep_fraction;
  j["seed"] = r.seed;
  j["step"] = s.step;
  j["epoch"] = s.epoch;
  j["mean_train_loss"] = s.mean_train_loss;
  j["kept"] = s.kept;
  j["kept_weight"] = s.kept_weight;
  j["val_loss"] = s.val_loss ? json(*s.val_loss) : json(nullptr);
  return j;
}

/// One line per step of every run, in grid order; a diverged run ends with a
/// diagnostic record.
inline std::string run_log_jsonl(const Report& report) {
  std::string out;
  for (const auto& r : report.runs) {
    for (const auto& s : r.run.records) {
      out += step_record_json(r, s).dump();
      out += '\n';
    }
    if (r.run.diverged) {
      json j;
      j["policy"] = std::string(policy_name(r.policy));
      j["keep_fraction"] = r.keep_fraction;
      j["seed"] = r.seed;
      j["diverged"] = true;
      j["diagnostic"] = r.run.diagnostic;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

inline std::string report_csv(const Report& report) {
  std::string out =
      "policy,keep_fraction,runs,diverged,mean_val_loss,stdev_val_loss,total_flops,"
      "full_batch_flops,flops_ratio\n";
  for (const auto& row : report.rows) {
    out += std::string(policy_name(row.policy)) + ',' + fmt_real(row.keep_fraction) + ',' +
           std::to_string(row.runs) + ',' + std::to_string(row.diverged) + ',' +
           fmt_real(row.mean_val_loss) + ',' + fmt_real(row.stdev_val_loss) + ',' +
           fmt_real(row.total_flops) + ',' + fmt_real(row.full_batch_flops) + ',' +
           fmt_real(row.total_flops / row.full_batch_flops) + '\n';
  }
  return out;
}

inline std::string plain_table(const Report& report) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %6s %5s %12s %10s %10s\n", "policy", "keep", "runs",
                "val_loss", "stdev", "flops_x");
  out += buf;
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%-12s %6.3f %5zu %12.6f %10.6f %10.4f\n",
                  std::string(policy_name(row.policy)).c_str(), row.keep_fraction, row.runs,
                  row.mean_val_loss, row.stdev_val_loss, row.total_flops / row.full_batch_flops);
    out += buf;
  }
  return out;
}

/// Mean (over seeds) training loss per step for every policy/keep cell.
inline std::string loss_curves_svg(const Report& report) {
  std::map<std::pair<std::string, double>, std::vector<std::pair<double, std::size_t>>> curves;
  for (const auto& r : report.runs) {
    auto& c = curves[{std::string(policy_name(r.policy)), r.keep_fraction}];
    if (c.size() < r.run.records.size()) c.resize(r.run.records.size(), {0.0, 0});
    for (std::size_t i = 0; i < r.run.records.size(); ++i) {
      c[i].first += r.run.records[i].mean_train_loss;
      ++c[i].second;
    }
  }
  double ymin = 1e300, ymax = -1e300;
  std::size_t xmax = 1;
  for (auto& [key, c] : curves) {
    xmax = std::max(xmax, c.size());
    for (auto& [sum, n] : c) {
      const double y = sum / static_cast<double>(n);
      if (std::isfinite(y)) {
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (!(ymax > ymin)) {
    ymin = 0.0;
    ymax = 1.0;
  }
  constexpr double kW = 800, kH = 480, kPad = 50;
  static constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                            "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"480\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"50\" y=\"30\" font-family=\"sans-serif\" font-size=\"14\">mean training loss vs step (y: " +
         fmt_real(ymin) + " .. " + fmt_real(ymax) + ")</text>\n";
  std::size_t color = 0;
  double legend_y = kPad + 10;
  for (auto& [key, c] : curves) {
    std::string pts;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double y = c[i].first / static_cast<double>(c[i].second);
      if (!std::isfinite(y)) continue;
      const double px = kPad + (kW - 2 * kPad) * static_cast<double>(i) /
                                   static_cast<double>(std::max<std::size_t>(1, xmax - 1));
      const double py = kH - kPad - (kH - 2 * kPad) * (y - ymin) / (ymax - ymin);
      pts += fmt_real(px) + ',' + fmt_real(py) + ' ';
    }
    const char* col = kColors[color++ % std::size(kColors)];
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" points=\"" + pts + "\"/>\n";
    svg += "<text x=\"" + fmt_real(kW - 190) + "\" y=\"" + fmt_real(legend_y) +
           "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" + col + "\">" + key.first +
           " keep=" + fmt_real(key.second) + "</text>\n";
    legend_y += 16;
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Simulation spec files

struct SimulationSpec {
  SyntheticDatasetSpec dataset;
  TrainHyperparams hyper;
  SelectionConfig selection;
};

inline SimulationSpec parse_simulation_spec(const json& j) {
  if (!j.is_object()) throw ConfigError("simulation spec must be a JSON object");
  SimulationSpec s;
  auto check_keys = [](const json& obj, std::initializer_list<const char*> allowed,
                       const char* section) {
    if (!obj.is_object()) throw ConfigError(std::string("'") + section + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      bool ok = false;
      for (auto* a : allowed) ok = ok || it.key() == a;
      if (!ok) throw ConfigError("unknown key '" + it.key() + "' in '" + section + "'");
    }
  };
  check_keys(j, {"dataset", "train", "selection"}, "spec");
  try {
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      check_keys(d, {"n_classes", "hidden_dim", "n_train", "n_val", "n_clusters", "redundancy",
                     "noise", "seed", "center_scale", "cluster_spread", "jitter"},
                 "dataset");
      auto& ds = s.dataset;
      ds.n_classes = d.value("n_classes", ds.n_classes);
      ds.hidden_dim = d.value("hidden_dim", ds.hidden_dim);
      ds.n_train = d.value("n_train", ds.n_train);
      ds.n_val = d.value("n_val", ds.n_val);
      ds.n_clusters = d.value("n_clusters", ds.n_clusters);
      ds.redundancy = d.value("redundancy", ds.redundancy);
      ds.noise = d.value("noise", ds.noise);
      ds.seed = d.value("seed", ds.seed);
      ds.center_scale = d.value("center_scale", ds.center_scale);
      ds.cluster_spread = d.value("cluster_spread", ds.cluster_spread);
      ds.jitter = d.value("jitter", ds.jitter);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, {"epochs", "learning_rate", "batch_size"}, "train");
      s.hyper.epochs = t.value("epochs", s.hyper.epochs);
      s.hyper.learning_rate = t.value("learning_rate", s.hyper.learning_rate);
      s.hyper.batch_size = t.value("batch_size", s.hyper.batch_size);
    }
    if (j.contains("selection")) {
      const auto& c = j["selection"];
      check_keys(c, {"k", "beta2", "epsilon"}, "selection");
      s.selection.k = c.value("k", s.selection.k);
      s.selection.beta2 = c.value("beta2", s.selection.beta2);
      s.selection.epsilon = c.value("epsilon", s.selection.epsilon);
    }
  } catch (const json::type_error& e) {
    throw ConfigError(std::string("simulation spec has a field of the wrong type: ") + e.what());
  }
  s.dataset.validate();
  if (s.selection.k == 0) throw ConfigError("k must be positive");
  return s;
}

inline json simulation_spec_json(const SimulationSpec& s) {
  const auto& d = s.dataset;
  return json{{"dataset",
               {{"n_classes", d.n_classes},
                {"hidden_dim", d.hidden_dim},
                {"n_train", d.n_train},
                {"n_val", d.n_val},
                {"n_clusters", d.n_clusters},
                {"redundancy", d.redundancy},
                {"noise", d.noise},
                {"seed", d.seed},
                {"center_scale", d.center_scale},
                {"cluster_spread", d.cluster_spread},
                {"jitter", d.jitter}}},
              {"train",
               {{"epochs", s.hyper.epochs},
                {"learning_rate", s.hyper.learning_rate},
                {"batch_size", s.hyper.batch_size}}},
              {"selection",
               {{"k", s.selection.k},
                {"beta2", s.selection.beta2},
                {"epsilon", s.selection.epsilon}}}};
}

}  // namespace slap::sim
