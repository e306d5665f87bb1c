#include "cdgpa/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cdgpa/config.hpp"
#include "cdgpa/diagnostics.hpp"
#include "cdgpa/errors.hpp"
#include "cdgpa/io.hpp"
#include "cdgpa/random.hpp"
#include "cdgpa/training.hpp"

namespace cdgpa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Collects every file a command writes and the manifest that lists them.
class RunOutput {
 public:
  RunOutput(const fs::path& dir, std::string command, json config, std::uint64_t seed)
      : dir_(dir), started_(utc_now()) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw UsageError("cannot create output directory " + dir_.string() + ": " + ec.message());
    manifest_ = json{{"command", std::move(command)}, {"config", std::move(config)}, {"seed", seed},
                     {"inputs", json::array()}, {"out_dir", dir_.string()}};
  }

  void add_input(const std::string& role, const fs::path& path) {
    manifest_["inputs"].push_back(json{{"role", role}, {"path", path.string()}, {"fnv1a64", hex64(fnv1a64(read_text(path)))}});
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw UsageError("cannot write " + (dir_ / name).string());
    out << content;
    out.close();
    outputs_.push_back(json{{"path", name}, {"bytes", content.size()}, {"fnv1a64", hex64(fnv1a64(content))}});
  }

  void write_manifest(const std::string& status) {
    json m = manifest_;
    m["outputs"] = outputs_;
    m["status"] = status;
    m["started_at"] = started_;
    m["finished_at"] = status == "running" ? json(nullptr) : json(utc_now());
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    if (!out) throw UsageError("cannot write manifest in " + dir_.string());
    out << dump(m);
  }

 private:
  fs::path dir_;
  std::string started_;
  json manifest_;
  json outputs_ = json::array();
};

struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<double> gamma_mal;
  std::optional<double> gamma_cal;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> context_length;
  std::optional<double> lr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "INI-style config file (flags override it)");
  cmd->add_option("--seed", f.seed, "Root seed");
  cmd->add_option("--out-dir", f.out_dir, "Output directory")->required();
  cmd->add_option("--gamma-mal", f.gamma_mal, "Marginal alignment weight (default 0.01)");
  cmd->add_option("--gamma-cal", f.gamma_cal, "Conditional alignment weight (default 1)");
  cmd->add_option("--epochs", f.epochs, "Training epochs (default 30)");
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size per domain (default 32)");
  cmd->add_option("--context-length", f.context_length, "Text context tokens (default 16)");
  cmd->add_option("--lr", f.lr, "Initial prompt learning rate (default 0.003)");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c;
  if (f.config) {
    if (!fs::exists(*f.config)) throw UsageError("config file not found: " + *f.config);
    apply_config_file(c, *f.config);
  }
  if (f.gamma_mal) c.train.gamma_mal = *f.gamma_mal;
  if (f.gamma_cal) c.train.gamma_cal = *f.gamma_cal;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.batch_size) c.train.batch_size = *f.batch_size;
  if (f.context_length) c.model.context_length = *f.context_length;
  if (f.lr) c.train.lr = *f.lr;
  c.propagate_seed(f.seed.value_or(c.seed));
  return c;
}

struct DataPaths {
  std::string source;
  std::string target;
  std::optional<std::string> target_labels;
};

void add_data(CLI::App* cmd, DataPaths& p, bool labels_required) {
  cmd->add_option("--source", p.source, "Labeled source feature file")->required();
  cmd->add_option("--target", p.target, "Unlabeled target feature file")->required();
  auto* opt = cmd->add_option("--target-labels", p.target_labels, "Labeled target file, used only for evaluation");
  if (labels_required) opt->required();
}

struct LoadedData {
  DomainBatch source;
  DomainBatch target;
  std::optional<TargetLabels> hidden;
};

DomainBatch load_batch(const std::string& path, std::size_t num_classes) {
  if (!fs::exists(path)) throw UsageError("input file not found: " + path);
  return load_feature_file(path, num_classes);
}

void add_inputs(RunOutput& run, const DataPaths& p) {
  run.add_input("source", p.source);
  run.add_input("target", p.target);
  if (p.target_labels) run.add_input("target_labels", *p.target_labels);
}

LoadedData load_data(const DataPaths& p, RunConfig& c) {
  LoadedData d{load_batch(p.source, c.data.num_classes), load_batch(p.target, c.data.num_classes), std::nullopt};
  if (d.source.dim() != d.target.dim()) {
    throw DimensionError("source dim " + std::to_string(d.source.dim()) + " differs from target dim " +
                         std::to_string(d.target.dim()));
  }
  if (p.target_labels) {
    DomainBatch labeled = load_batch(*p.target_labels, c.data.num_classes);
    if (!labeled.labeled() || labeled.size() != d.target.size()) {
      throw DimensionError("target label file must be labeled and match the target row count");
    }
    d.hidden = TargetLabels{*labeled.labels};
  }
  c.model.input_dim = d.source.dim();
  c.model.num_classes = c.data.num_classes;
  return d;
}

FitResult run_fit(const RunConfig& c, const LoadedData& d, std::size_t pad_every) {
  TrainingData data(d.source, d.target);
  AdaptationModel model = AdaptationModel::create(c.model, c.disc_hidden, c.seed);
  if (!d.hidden) return fit(c.train, data, std::move(model));
  Evaluator ev(d.source, d.target, *d.hidden, c.seed);
  ev.set_pad_schedule(pad_every);
  return fit(c.train, data, std::move(model), &ev);
}

std::string num(double v) { return format_double(v); }

std::string opt_num(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

// ---------------------------------------------------------------- commands

struct DataFlags {
  std::optional<std::string> layout;
  std::optional<std::size_t> classes;
  std::optional<std::size_t> dim;
  std::optional<std::size_t> n_source;
  std::optional<std::size_t> n_target;
  std::optional<std::string> translation;
  std::optional<double> rotation;
  std::optional<double> scale;
  std::optional<double> conditional_shift;
  std::optional<double> separation;
  std::optional<double> noise;
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--layout", d.layout, "gaussian or moons")->check(CLI::IsMember({"gaussian", "moons"}));
  cmd->add_option("--classes", d.classes, "Number of classes");
  cmd->add_option("--dim", d.dim, "Input dimension");
  cmd->add_option("--n-source", d.n_source, "Source samples");
  cmd->add_option("--n-target", d.n_target, "Target samples");
  cmd->add_option("--translation", d.translation, "Comma-separated target translation");
  cmd->add_option("--rotation", d.rotation, "Target rotation in radians");
  cmd->add_option("--scale", d.scale, "Target scale");
  cmd->add_option("--conditional-shift", d.conditional_shift, "Per-class target offset magnitude");
  cmd->add_option("--separation", d.separation, "Class separation");
  cmd->add_option("--noise", d.noise, "Noise standard deviation");
}

void apply_data_flags(RunConfig& c, const DataFlags& d) {
  if (d.layout) c.layout = *d.layout;
  if (d.classes) c.data.num_classes = *d.classes;
  if (d.dim) c.data.input_dim = *d.dim;
  if (d.n_source) c.data.n_source = *d.n_source;
  if (d.n_target) c.data.n_target = *d.n_target;
  if (d.translation) c.data.translation = parse_double_list(*d.translation);
  if (d.rotation) c.data.rotation = *d.rotation;
  if (d.scale) c.data.scale = *d.scale;
  if (d.conditional_shift) c.data.conditional_shift = *d.conditional_shift;
  if (d.separation) c.data.separation = *d.separation;
  if (d.noise) c.data.noise = *d.noise;
}

int cmd_gen_data(const CommonFlags& f, const DataFlags& df, std::ostream& out) {
  RunConfig c = resolve(f);
  apply_data_flags(c, df);
  c.data.validate();
  RunOutput run(f.out_dir, "gen-data", to_json(c), c.seed);
  run.write_manifest("running");
  const SyntheticDomains d = c.layout == "moons" ? gen_two_moons_shift(c.data) : gen_gaussian_domains(c.data);
  run.write("source.csv", format_feature_csv(d.source));
  run.write("target.csv", format_feature_csv(d.target));
  run.write("target_labels.csv", format_feature_csv(labeled_target(d.target, d.hidden_target_labels)));
  run.write_manifest("ok");
  out << "gen-data: " << d.source.size() << " source rows, " << d.target.size() << " target rows, "
      << c.data.num_classes << " classes, dim " << c.data.input_dim << " -> " << f.out_dir << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& f, const DataPaths& p, std::ostream& out, std::ostream& err) {
  RunConfig c = resolve(f);
  const LoadedData d = load_data(p, c);
  c.validate();
  RunOutput resolved(f.out_dir, "train", to_json(c), c.seed);
  add_inputs(resolved, p);
  resolved.write_manifest("running");
  FitResult r;
  try {
    r = run_fit(c, d, c.pad_every);
  } catch (const DivergenceError& e) {
    resolved.write("divergence.json", dump(json::parse(e.snapshot())));
    resolved.write_manifest("diverged");
    err << "error: " << e.what() << "\n" << e.snapshot() << "\n";
    return kExitDivergence;
  }
  resolved.write("report.jsonl", report_jsonl(r.report));
  resolved.write("summary.json", dump(report_summary(r.report)));
  resolved.write("checkpoint.json", checkpoint_to_json(r.model, c.seed).dump() + "\n");
  resolved.write_manifest("ok");
  const EpochRecord& last = r.report.epochs.back();
  out << "train: " << c.train.epochs << " epochs, final total loss " << num(last.total) << ", source accuracy "
      << num(last.source_accuracy);
  if (last.metrics) out << ", target accuracy " << num(last.metrics->target_accuracy);
  out << "\n";
  return kExitOk;
}

struct Branches {
  const char* name;
  bool mal;
  bool cal;
};

constexpr Branches kAblation[] = {{"dual", true, true}, {"mal-only", true, false}, {"cal-only", false, true},
                                  {"none", false, false}};

int cmd_ablate(const CommonFlags& f, const DataPaths& p, std::ostream& out) {
  RunConfig c = resolve(f);
  const LoadedData d = load_data(p, c);
  c.validate();
  RunOutput run(f.out_dir, "ablate", to_json(c), c.seed);
  add_inputs(run, p);
  run.write_manifest("running");

  std::string rows = "config,L_mal,L_cal,seed,source_accuracy,target_accuracy,proxy_a_distance,conditional_discrepancy\n";
  std::string summary = "config,L_mal,L_cal,seeds,mean_source_accuracy,mean_target_accuracy,mean_conditional_discrepancy\n";
  for (const Branches& b : kAblation) {
    double src = 0.0, tgt = 0.0, dc = 0.0;
    for (std::size_t i = 0; i < c.seeds; ++i) {
      RunConfig rc = c;
      rc.propagate_seed(c.seed + i);
      rc.train.mal_on = b.mal;
      rc.train.cal_on = b.cal;
      const FitResult r = run_fit(rc, d, 0);
      const EpochMetrics& m = *r.report.epochs.back().metrics;
      rows += std::string(b.name) + "," + (b.mal ? "✓" : "✗") + "," + (b.cal ? "✓" : "✗") + "," +
              std::to_string(rc.seed) + "," + num(m.source_accuracy) + "," + num(m.target_accuracy) + "," +
              opt_num(m.proxy_a_distance) + "," + num(m.conditional_discrepancy) + "\n";
      src += m.source_accuracy;
      tgt += m.target_accuracy;
      dc += m.conditional_discrepancy;
    }
    const double n = static_cast<double>(c.seeds);
    summary += std::string(b.name) + "," + (b.mal ? "✓" : "✗") + "," + (b.cal ? "✓" : "✗") + "," +
               std::to_string(c.seeds) + "," + num(src / n) + "," + num(tgt / n) + "," + num(dc / n) + "\n";
  }
  run.write("ablation.csv", rows);
  run.write("ablation_summary.csv", summary);
  run.write_manifest("ok");
  out << summary;
  return kExitOk;
}

int cmd_sweep(const CommonFlags& f, const DataPaths& p, const std::optional<std::string>& mal_grid,
              const std::optional<std::string>& cal_grid, std::ostream& out) {
  RunConfig c = resolve(f);
  if (mal_grid) c.gamma_mal_grid = parse_double_list(*mal_grid);
  if (cal_grid) c.gamma_cal_grid = parse_double_list(*cal_grid);
  const LoadedData d = load_data(p, c);
  c.validate();
  RunOutput run(f.out_dir, "sweep", to_json(c), c.seed);
  add_inputs(run, p);
  run.write_manifest("running");

  std::string rows = "gamma_mal,gamma_cal,seed,source_accuracy,target_accuracy,proxy_a_distance,conditional_discrepancy\n";
  json cells = json::array();
  std::optional<std::size_t> best;
  double best_mean = 0.0;
  for (double gm : c.gamma_mal_grid) {
    for (double gc : c.gamma_cal_grid) {
      double tgt = 0.0;
      for (std::size_t i = 0; i < c.seeds; ++i) {
        RunConfig rc = c;
        rc.propagate_seed(c.seed + i);
        rc.train.gamma_mal = gm;
        rc.train.gamma_cal = gc;
        const FitResult r = run_fit(rc, d, 0);
        const EpochMetrics& m = *r.report.epochs.back().metrics;
        rows += num(gm) + "," + num(gc) + "," + std::to_string(rc.seed) + "," + num(m.source_accuracy) + "," +
                num(m.target_accuracy) + "," + opt_num(m.proxy_a_distance) + "," + num(m.conditional_discrepancy) +
                "\n";
        tgt += m.target_accuracy;
      }
      const double mean = tgt / static_cast<double>(c.seeds);
      if (!best || mean > best_mean) {
        best = cells.size();
        best_mean = mean;
      }
      cells.push_back(json{{"gamma_mal", gm}, {"gamma_cal", gc}, {"mean_target_accuracy", mean}});
    }
  }
  json summary{{"seeds", c.seeds}, {"cells", cells}, {"best", cells.at(*best)}};
  run.write("sweep.csv", rows);
  run.write("sweep_summary.json", dump(summary));
  run.write_manifest("ok");
  out << "sweep: " << cells.size() << " cells x " << c.seeds << " seeds; best gamma_mal "
      << num(cells.at(*best)["gamma_mal"].get<double>()) << ", gamma_cal "
      << num(cells.at(*best)["gamma_cal"].get<double>()) << " (mean target accuracy " << num(best_mean) << ")\n";
  return kExitOk;
}

int cmd_diagnose(const CommonFlags& f, const DataPaths& p, const std::string& checkpoint_path, std::ostream& out) {
  RunConfig c = resolve(f);
  if (!fs::exists(checkpoint_path)) throw UsageError("checkpoint not found: " + checkpoint_path);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  c.data.num_classes = ck.model.config.num_classes;
  const LoadedData d = load_data(p, c);
  if (d.source.dim() != ck.model.config.input_dim) {
    throw DimensionError("checkpoint expects input dim " + std::to_string(ck.model.config.input_dim) +
                         ", data has " + std::to_string(d.source.dim()));
  }
  if (!d.source.labeled()) throw PreconditionError("diagnose needs a labeled source file");
  if (d.target.labeled()) throw PreconditionError("diagnose takes labels only through --target-labels");
  RunOutput run(f.out_dir, "diagnose", to_json(c), c.seed);
  run.add_input("checkpoint", checkpoint_path);
  add_inputs(run, p);
  run.write_manifest("running");

  const AdaptationModel& m = ck.model;
  const Tensor text = m.text_features();
  const Tensor is = m.image_features(d.source.x);
  const Tensor it = m.image_features(d.target.x);
  const auto pred_s = argmax_rows(clip_logits(is, text, m.frozen.temperature));
  const auto pseudo = argmax_rows(clip_logits(it, text, m.frozen.temperature));
  const double source_accuracy = accuracy(pred_s, *d.source.labels);
  const ConditionalDiscrepancy cond = conditional_discrepancy(is, *d.source.labels, it, pseudo);
  const DiscrepancyReport rep =
      DiscrepancyReport::from_parts(proxy_a_distance(is, it, c.seed), cond.value, 1.0 - source_accuracy);
  json j{{"discrepancy", to_json(rep)},
         {"source_accuracy", source_accuracy},
         {"matched_classes", cond.matched_classes},
         {"skipped_classes", cond.skipped_classes}};
  j["target_accuracy"] = d.hidden ? json(accuracy(pseudo, d.hidden->labels)) : json(nullptr);
  run.write("report.json", dump(j));
  run.write("projection.csv", projection_csv(is, *d.source.labels, it, pseudo));
  run.write_manifest("ok");
  out << "diagnose: d_H_proxy " << num(rep.d_h_proxy) << ", d_C " << num(rep.d_c_empirical) << ", d_J "
      << num(rep.d_j) << ", lambda " << rep.lambda_status << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-alignment prompt adaptation on synthetic domains"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, ablate_f, sweep_f, diag_f;
  DataFlags gen_d;
  DataPaths train_p, ablate_p, sweep_p, diag_p;
  std::optional<std::string> mal_grid, cal_grid;
  std::string checkpoint;

  auto* gen = app.add_subcommand("gen-data", "Write synthetic source/target feature files");
  add_common(gen, gen_f);
  add_data_flags(gen, gen_d);
  auto* train = app.add_subcommand("train", "Fit the prompt and write a run report and checkpoint");
  add_common(train, train_f);
  add_data(train, train_p, false);
  auto* ablate = app.add_subcommand("ablate", "Compare dual, single-branch and no-alignment runs");
  add_common(ablate, ablate_f);
  add_data(ablate, ablate_p, true);
  auto* sweep = app.add_subcommand("sweep", "Grid over the two alignment weights");
  add_common(sweep, sweep_f);
  add_data(sweep, sweep_p, true);
  sweep->add_option("--gamma-mal-grid", mal_grid, "Comma-separated marginal weights (default 2,1,0.1,0.01)");
  sweep->add_option("--gamma-cal-grid", cal_grid, "Comma-separated conditional weights (default 2,1,0.1,0.01)");
  auto* diagnose = app.add_subcommand("diagnose", "Discrepancy report and 2-D projections for a checkpoint");
  add_common(diagnose, diag_f);
  add_data(diagnose, diag_p, false);
  diagnose->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_f, gen_d, out);
    if (train->parsed()) return cmd_train(train_f, train_p, out, err);
    if (ablate->parsed()) return cmd_ablate(ablate_f, ablate_p, out);
    if (sweep->parsed()) return cmd_sweep(sweep_f, sweep_p, mal_grid, cal_grid, out);
    if (diagnose->parsed()) return cmd_diagnose(diag_f, diag_p, checkpoint, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n" << e.snapshot() << "\n";
    return kExitDivergence;
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const cdgpa::ParseError& e) {
    err << "error: line " << e.line() << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cdgpa
