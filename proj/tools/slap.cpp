// slap: command-line front end for batch selection, simulation and FLOPs
// accounting.
//
//   slap select   --policy slap --keep 0.3 --input batch.jsonl --output coreset.jsonl
//   slap simulate --spec sim.json --policies slap,random --keep-rates 0.5 --seeds 0,1 --out dir
//   slap flops    --batch 320 --li 512 --lo 512 --ff 1 --alpha 0.7
//   slap replay   --manifest coreset.jsonl.manifest.json
//
// Exit codes: 0 ok, 1 internal, 2 config, 3 schema, 4 integrity, 5 numeric.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slap/costmodel.hpp"
#include "slap/errors.hpp"
#include "slap/io.hpp"
#include "slap/manifest.hpp"
#include "slap/selector.hpp"
#include "slap/sim.hpp"
#include "slap/sim_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args);

std::string real_arg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::optional<std::uint64_t> env_u64(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto x = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(name);
    return x;
  } catch (const std::exception&) {
    throw slap::ConfigError(std::string("environment variable ") + name + " is not an integer");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_manifest(const fs::path& path, slap::RunManifest& m,
                    std::chrono::steady_clock::time_point t0) {
  m.wall_seconds = seconds_since(t0);
  slap::io::atomic_write(path, slap::to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// select

struct SelectOptions {
  std::string policy = "slap";
  double keep = 1.0;
  std::size_t k = 8;
  std::uint64_t seed = 0;
  double beta2 = slap::SecondMomentState::kDefaultBeta2;
  double epsilon = slap::SecondMomentState::kDefaultEpsilon;
  std::optional<std::size_t> ccs_k;
  std::string input;
  std::string output;
  std::string state;
  std::string state_out;
  std::string mode = "precomputed";
  std::size_t batch_size = 320;
  std::string config;
  std::string manifest;
  bool no_manifest = false;
};

/// Applies a JSON config file. Keys: policy, keep_fraction, k, seed, beta2,
/// epsilon (plus ccs_k, batch_size, mode).
void apply_config_file(SelectOptions& o, const fs::path& path) {
  json j;
  try {
    j = json::parse(slap::io::read_file(path));
  } catch (const json::parse_error& e) {
    throw slap::ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw slap::ConfigError("config file must hold a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& key = it.key();
      if (key == "policy") o.policy = it->get<std::string>();
      else if (key == "keep_fraction") o.keep = it->get<double>();
      else if (key == "k") o.k = it->get<std::size_t>();
      else if (key == "seed") o.seed = it->get<std::uint64_t>();
      else if (key == "beta2") o.beta2 = it->get<double>();
      else if (key == "epsilon") o.epsilon = it->get<double>();
      else if (key == "ccs_k") o.ccs_k = it->get<std::size_t>();
      else if (key == "batch_size") o.batch_size = it->get<std::size_t>();
      else if (key == "mode") o.mode = it->get<std::string>();
      else throw slap::ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::type_error& e) {
    throw slap::ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
}

std::vector<std::string> resolved_select_args(const SelectOptions& o) {
  std::vector<std::string> a = {"--policy", o.policy,      "--keep",  real_arg(o.keep),
                                "--k",      std::to_string(o.k), "--seed", std::to_string(o.seed),
                                "--beta2",  real_arg(o.beta2),   "--epsilon", real_arg(o.epsilon),
                                "--input",  o.input,         "--output", o.output,
                                "--mode",   o.mode,          "--batch-size", std::to_string(o.batch_size)};
  if (o.ccs_k) a.insert(a.end(), {"--ccs-k", std::to_string(*o.ccs_k)});
  if (!o.state.empty()) a.insert(a.end(), {"--state", o.state});
  if (!o.state_out.empty()) a.insert(a.end(), {"--state-out", o.state_out});
  return a;
}

int run_select(const SelectOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  slap::SelectionPolicy policy;
  policy.kind = slap::parse_policy(o.policy);
  policy.config = {o.keep, o.k, o.seed, o.beta2, o.epsilon};
  policy.ccs_k = o.ccs_k;
  slap::coreset_size(1, o.keep);  // validates keep_fraction
  if (o.k == 0) throw slap::ConfigError("--k must be positive");
  const auto mode = slap::io::parse_input_mode(o.mode);

  slap::RunManifest manifest;
  manifest.command = "select";
  manifest.args = resolved_select_args(o);
  manifest.config = {{"policy", o.policy}, {"keep_fraction", o.keep}, {"k", o.k},
                     {"seed", o.seed},     {"beta2", o.beta2},      {"epsilon", o.epsilon},
                     {"mode", o.mode},     {"batch_size", o.batch_size}};
  manifest.seeds = {o.seed};
  manifest.add_input(o.input);

  slap::SecondMomentState state;
  const bool have_state = !o.state.empty() && fs::exists(o.state);
  if (have_state) {
    manifest.add_input(o.state);
    state = slap::io::load_state(o.state);
    if (state.beta2 != o.beta2 || state.epsilon != o.epsilon)
      std::cerr << "slap: note: using beta2/epsilon stored in " << o.state << "\n";
  }

  slap::io::RecordReader reader(o.input, mode, o.batch_size);
  slap::Selector selector(policy, state);
  slap::Rng rng(o.seed);
  std::string coreset_out;
  std::size_t batches = 0, kept = 0;
  while (auto b = reader.next()) {
    slap::Coreset c;
    if (mode == slap::io::InputMode::kRaw)
      c = selector.select_raw(b->raw, rng);
    else
      c = selector.select(slap::Batch(std::move(b->records)), rng);
    slap::io::append_coreset_jsonl(coreset_out, c, b->index);
    ++batches;
    kept += c.size();
  }

  std::optional<std::string> state_bytes;
  const std::string state_target = o.state_out.empty() ? o.state : o.state_out;
  if (!state_target.empty()) {
    slap::SecondMomentState final_state = selector.state();
    if (final_state.rows() == 0 && mode == slap::io::InputMode::kRaw && reader.shape().d != 0)
      final_state = slap::SecondMomentState(reader.shape().d, reader.shape().h, o.beta2, o.epsilon);
    if (final_state.rows() != 0) state_bytes = slap::io::encode_state(final_state);
  }

  slap::io::atomic_write(o.output, coreset_out);
  manifest.add_output(o.output, coreset_out);
  if (state_bytes) {
    slap::io::atomic_write(state_target, *state_bytes);
    manifest.add_output(state_target, *state_bytes);
  }
  if (!o.no_manifest)
    write_manifest(o.manifest.empty() ? o.output + ".manifest.json" : o.manifest, manifest, t0);
  std::cerr << "slap: " << batches << " batch(es), " << kept << " sample(s) kept\n";
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string spec;
  std::vector<std::string> policies = {"slap", "random"};
  std::vector<double> keep_rates = {0.5};
  std::vector<std::uint64_t> seeds = {0};
  std::string out;
  std::size_t threads = 1;
  bool no_manifest = false;
};

int run_simulate(const SimulateOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!fs::exists(o.spec)) throw slap::ConfigError("spec file '" + o.spec + "' does not exist");
  slap::sim::SimulationSpec spec;
  try {
    spec = slap::sim::parse_simulation_spec(json::parse(slap::io::read_file(o.spec)));
  } catch (const json::parse_error& e) {
    throw slap::ConfigError("spec file is not valid JSON: " + std::string(e.what()));
  }

  slap::sim::CompareRequest req;
  req.dataset = spec.dataset;
  req.hyper = spec.hyper;
  req.keep_rates = o.keep_rates;
  req.seeds = o.seeds;
  req.threads = o.threads;
  for (const auto& p : o.policies) {
    slap::SelectionPolicy pol;
    pol.kind = slap::parse_policy(p);
    pol.config = spec.selection;
    req.policies.push_back(pol);
  }
  const auto report = slap::sim::compare_policies(req);

  const std::string log = slap::sim::run_log_jsonl(report);
  const std::string csv = slap::sim::report_csv(report);
  const std::string svg = slap::sim::loss_curves_svg(report);

  const fs::path out(o.out);
  fs::create_directories(out);
  slap::RunManifest manifest;
  manifest.command = "simulate";
  std::string policies, rates, seeds;
  for (const auto& p : o.policies) policies += (policies.empty() ? "" : ",") + p;
  for (double r : o.keep_rates) rates += (rates.empty() ? "" : ",") + real_arg(r);
  for (auto s : o.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  manifest.args = {"--spec",  o.spec, "--policies", policies, "--keep-rates", rates,
                   "--seeds", seeds,  "--out",      o.out,    "--threads",    std::to_string(o.threads)};
  manifest.config = slap::sim::simulation_spec_json(spec);
  manifest.seeds = o.seeds;
  manifest.environment["threads"] = o.threads;
  manifest.add_input(o.spec);

  const std::pair<const char*, const std::string*> files[] = {
      {"runs.jsonl", &log}, {"report.csv", &csv}, {"loss_curves.svg", &svg}};
  for (const auto& [name, content] : files) {
    slap::io::atomic_write(out / name, *content);
    manifest.add_output(out / name, *content);
  }
  if (!o.no_manifest) write_manifest(out / "manifest.json", manifest, t0);
  std::cout << slap::sim::plain_table(report);
  return 0;
}

// ---------------------------------------------------------------------------
// flops

struct FlopsOptions {
  std::uint64_t batch = 320;
  std::uint64_t li = 1;
  std::uint64_t lo = 1;
  double ff = 1.0;
  std::optional<double> fb;
  double alpha = 0.0;
  std::optional<std::uint64_t> feature_dim;
};

int run_flops(const FlopsOptions& o) {
  slap::FlopsModel m{o.batch, o.li, o.lo, o.ff, o.fb.value_or(2.0 * o.ff), o.alpha};
  m.validate();
  const double full = slap::full_batch_flops(m);
  const double pruned = slap::slap_flops(m);
  json j = {{"batch", m.batch_size},
            {"input_len", m.input_len},
            {"output_len", m.output_len},
            {"forward_per_token", m.forward_per_token},
            {"backward_per_token", m.backward_per_token},
            {"alpha", m.prune_rate},
            {"full_batch_flops", full},
            {"slap_flops", pruned},
            {"full_backward_flops", slap::full_backward_flops(m)},
            {"slap_backward_flops", slap::pruned_backward_flops(m)},
            {"savings_ratio", slap::savings_ratio(m)}};
  if (o.feature_dim) {
    const auto kept = slap::coreset_size(m.batch_size, 1.0 - m.prune_rate);
    j["selection_overhead_flops"] = slap::selection_overhead_flops(m.batch_size, kept, *o.feature_dim);
  }
  std::cout << j.dump() << "\n";
  std::printf("%-22s %20s\n", "quantity", "value");
  std::printf("%-22s %20.6g\n", "full_batch_flops", full);
  std::printf("%-22s %20.6g\n", "slap_flops", pruned);
  std::printf("%-22s %20.6g\n", "savings_ratio", slap::savings_ratio(m));
  std::printf("%-22s %19.2f%%\n", "saved", 100.0 * (1.0 - slap::savings_ratio(m)));
  return 0;
}

// ---------------------------------------------------------------------------
// replay

int run_replay(const std::string& manifest_path) {
  json j;
  try {
    j = json::parse(slap::io::read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw slap::SchemaError("manifest is not valid JSON: " + std::string(e.what()));
  }
  const auto m = slap::manifest_from_json(j);
  if (m.command != "select" && m.command != "simulate")
    throw slap::SchemaError("manifest names an unknown command '" + m.command + "'");
  for (const auto& in : m.inputs) {
    if (!fs::exists(in.path) || slap::io::sha256_file(in.path) != in.sha256)
      throw slap::IntegrityError("input '" + in.path + "' is missing or differs from the manifest");
  }
  std::vector<std::string> args = {"slap", m.command};
  args.insert(args.end(), m.args.begin(), m.args.end());
  args.push_back("--no-manifest");
  if (const int rc = run_cli(args); rc != 0) return rc;
  for (const auto& out : m.outputs) {
    if (slap::io::sha256_file(out.path) != out.sha256)
      throw slap::IntegrityError("replayed output '" + out.path + "' differs from the manifest");
  }
  std::cerr << "slap: replay reproduced " << m.outputs.size() << " output(s)\n";
  return 0;
}

// ---------------------------------------------------------------------------

int run_cli(std::vector<std::string> args) {
  CLI::App app{"Batch-aware coreset selection"};
  app.require_subcommand(1);

  SelectOptions sel;
  auto* select = app.add_subcommand("select", "select a coreset from each input batch");
  auto* o_policy = select->add_option("--policy", sel.policy, "slap|random|online_hard|ccs|infobatch");
  auto* o_keep = select->add_option("--keep", sel.keep,
                                    "fraction of each batch to keep (1 - pruning rate)");
  auto* o_k = select->add_option("--k", sel.k, "number of loss strata");
  auto* o_seed = select->add_option("--seed", sel.seed, "random seed (env SLAP_SEED)");
  auto* o_beta2 = select->add_option("--beta2", sel.beta2, "second-moment decay");
  auto* o_eps = select->add_option("--epsilon", sel.epsilon, "second-moment epsilon");
  std::size_t ccs_k = 0;
  auto* o_ccs = select->add_option("--ccs-k", ccs_k, "strata for the ccs policy (default --k)");
  auto* o_mode = select->add_option("--mode", sel.mode, "precomputed|raw|packed");
  auto* o_bs = select->add_option("--batch-size", sel.batch_size, "records per batch");
  select->add_option("--input", sel.input, "input records")->required();
  select->add_option("--output", sel.output, "coreset output (JSONL)")->required();
  select->add_option("--state", sel.state, "second-moment state file (read if present, then updated)");
  select->add_option("--state-out", sel.state_out, "write the updated state here instead of --state");
  select->add_option("--config", sel.config, "JSON config file; flags override it");
  select->add_option("--manifest", sel.manifest, "manifest path (default <output>.manifest.json)");
  select->add_flag("--no-manifest", sel.no_manifest, "skip writing a manifest");

  SimulateOptions simo;
  auto* simulate = app.add_subcommand("simulate", "compare policies on synthetic data");
  simulate->add_option("--spec", simo.spec, "simulation spec (JSON)")->required();
  simulate->add_option("--policies", simo.policies, "comma-separated policies")->delimiter(',');
  simulate->add_option("--keep-rates", simo.keep_rates, "comma-separated keep fractions")->delimiter(',');
  simulate->add_option("--seeds", simo.seeds, "comma-separated seeds")->delimiter(',');
  simulate->add_option("--out", simo.out, "output directory")->required();
  auto* o_threads = simulate->add_option("--threads", simo.threads, "worker threads (env SLAP_THREADS)");
  simulate->add_flag("--no-manifest", simo.no_manifest, "skip writing a manifest");

  FlopsOptions fo;
  double fb = 0.0;
  std::uint64_t feature_dim = 0;
  auto* flops = app.add_subcommand("flops", "training FLOPs with and without pruning");
  flops->add_option("--batch", fo.batch, "batch size");
  flops->add_option("--li", fo.li, "input tokens per sample");
  flops->add_option("--lo", fo.lo, "output tokens per sample");
  flops->add_option("--ff", fo.ff, "forward FLOPs per token");
  auto* o_fb = flops->add_option("--fb", fb, "backward FLOPs per token (default 2 * ff)");
  flops->add_option("--alpha", fo.alpha, "pruning rate in [0, 1)");
  auto* o_fd = flops->add_option("--feature-dim", feature_dim,
                                 "also estimate selection overhead for this feature length");

  std::string manifest_path;
  auto* replay = app.add_subcommand("replay", "re-run a command from its manifest and verify outputs");
  replay->add_option("--manifest", manifest_path, "manifest file")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(slap::ErrorKind::kConfig);
  }

  if (select->parsed()) {
    // defaults < config file < environment < flags
    SelectOptions base;
    base.input = sel.input;
    base.output = sel.output;
    base.state = sel.state;
    base.state_out = sel.state_out;
    base.manifest = sel.manifest;
    base.no_manifest = sel.no_manifest;
    if (!sel.config.empty()) apply_config_file(base, sel.config);
    if (auto s = env_u64("SLAP_SEED")) base.seed = *s;
    if (o_policy->count()) base.policy = sel.policy;
    if (o_keep->count()) base.keep = sel.keep;
    if (o_k->count()) base.k = sel.k;
    if (o_seed->count()) base.seed = sel.seed;
    if (o_beta2->count()) base.beta2 = sel.beta2;
    if (o_eps->count()) base.epsilon = sel.epsilon;
    if (o_ccs->count()) base.ccs_k = ccs_k;
    if (o_mode->count()) base.mode = sel.mode;
    if (o_bs->count()) base.batch_size = sel.batch_size;
    return run_select(base);
  }
  if (simulate->parsed()) {
    if (!o_threads->count()) {
      if (auto t = env_u64("SLAP_THREADS")) simo.threads = static_cast<std::size_t>(*t);
    }
    if (simo.threads == 0) simo.threads = 1;
    return run_simulate(simo);
  }
  if (flops->parsed()) {
    if (o_fb->count()) fo.fb = fb;
    if (o_fd->count()) fo.feature_dim = feature_dim;
    return run_flops(fo);
  }
  if (replay->parsed()) return run_replay(manifest_path);
  return static_cast<int>(slap::ErrorKind::kConfig);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(std::vector<std::string>(argv, argv + argc));
  } catch (const slap::Error& e) {
    std::cerr << "slap: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "slap: internal error: " << e.what() << "\n";
    return static_cast<int>(slap::ErrorKind::kInternal);
  }
}
