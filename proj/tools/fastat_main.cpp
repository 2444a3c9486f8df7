// Command line front end for the adversarial training harness.
//
//   fastat train    --config cfg [--seed N] [--out dir] [--override k=v ...]
//                   [--resume] [--stop-after N] [--quiet]
//   fastat eval     --config cfg --checkpoint model.fatb [--attack pgd10] ...
//   fastat detect   --metrics run/metrics.csv [--out verdict.json]
//   fastat plotdata --metrics run/metrics.csv --kind acc_vs_epoch [--out f.csv]
//   fastat gendata  --out dir [--n 2500] [--seed 0]

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fastat/attacks.hpp"
#include "fastat/data.hpp"
#include "fastat/harness.hpp"
#include "fastat/metrics.hpp"
#include "fastat/model_io.hpp"
#include "json.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
};

fastat::ExperimentConfig load_cfg(const CommonOpts& o) {
  std::vector<std::string> ov = o.overrides;
  // --seed and --out are sugar for the matching override keys; they apply last.
  if (o.seed) ov.push_back("train.seed=" + std::to_string(*o.seed));
  if (o.out_dir) ov.push_back("out.dir=" + *o.out_dir);
  return fastat::parse_config(o.config_path, ov);
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "key=value config file")->required();
  cmd->add_option("--override", o.overrides, "extra key=value settings, applied after the file");
  cmd->add_option("--seed", o.seed, "overrides train.seed");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (text.empty() || text.back() != '\n') std::cout << "\n";
    return;
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << text;
  if (text.empty() || text.back() != '\n') os << "\n";
}

int cmd_train(const CommonOpts& o, bool resume, int stop_after, bool quiet) {
  fastat::ExperimentConfig cfg = load_cfg(o);
  fastat::RunResult rr = fastat::run_experiment(cfg, resume, stop_after, quiet);
  if (rr.exit_status != 0) {
    std::cerr << "error: " << rr.error << "\n";
  } else if (!quiet) {
    std::cerr << "wrote " << cfg.out_dir << "/metrics.csv and " << cfg.out_dir
              << "/summary.json\n";
  }
  return rr.exit_status;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint, const std::string& attack,
             const std::string& out_path) {
  fastat::ExperimentConfig cfg = load_cfg(o);
  fastat::DataSplit split = fastat::load_data(cfg);
  fastat::Model<float> model = fastat::load_model<float>(checkpoint);

  const auto& es = split.eval.example_shape;
  int64_t ex_numel = 1;
  for (int d : es) ex_numel *= d;
  if (ex_numel != model.spec.input_dim() || split.eval.num_classes != model.spec.num_classes) {
    throw std::runtime_error("eval: checkpoint '" + checkpoint + "' expects " +
                             std::to_string(model.spec.input_dim()) + " inputs / " +
                             std::to_string(model.spec.num_classes) +
                             " classes, dataset provides " + std::to_string(ex_numel) + " / " +
                             std::to_string(split.eval.num_classes));
  }

  const float eps = cfg.train.epsilon;
  std::optional<fastat::AttackConfig<float>> atk;
  if (attack == "clean") atk = std::nullopt;
  else if (attack == "fgsm") atk = fastat::fgsm_eval_attack(eps);
  else if (attack == "pgd10") atk = fastat::pgd_eval_attack(eps, 10);
  else if (attack == "pgd20") atk = fastat::pgd_eval_attack(eps, 20);
  else if (attack == "pgd50") atk = fastat::pgd_eval_attack(eps, 50);
  else throw std::runtime_error("eval: unknown attack '" + attack +
                                "' (clean, fgsm, pgd10, pgd20, pgd50)");

  const double acc =
      fastat::eval_accuracy(model, split.eval, atk, cfg.eval_batch, cfg.train.seed);

  nlohmann::ordered_json j;
  j["checkpoint"] = checkpoint;
  j["attack"] = attack;
  j["epsilon"] = eps;
  j["examples"] = split.eval.size();
  j["accuracy"] = acc;
  write_text(out_path, j.dump(2));
  return 0;
}

int cmd_detect(const std::string& metrics_path, const std::string& out_path) {
  const auto history = fastat::parse_metrics_csv(metrics_path);
  const auto verdict = fastat::detect_catastrophic_overfitting(history);
  write_text(out_path, fastat::overfit_to_json(verdict));
  return 0;
}

int cmd_plotdata(const std::string& metrics_path, const std::string& kind,
                 const std::string& out_path) {
  const auto history = fastat::parse_metrics_csv(metrics_path);
  write_text(out_path, fastat::emit_plot_data(history, kind));
  return 0;
}

int cmd_gendata(const std::string& out_dir, int n, uint64_t seed) {
  fastat::Dataset ds = fastat::gen_synthetic_digits(n, seed);
  std::filesystem::create_directories(out_dir);
  const std::string images = out_dir + "/digits-images.idx3-ubyte";
  const std::string labels = out_dir + "/digits-labels.idx1-ubyte";
  fastat::save_idx(images, labels, ds);
  std::cerr << "wrote " << images << " and " << labels << " (" << n << " examples)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fast adversarial training experiments"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  bool resume = false, quiet = false;
  int stop_after = 0;
  auto* train = app.add_subcommand("train", "run a training experiment");
  add_common(train, train_opts);
  train->add_option("--out", train_opts.out_dir, "overrides out.dir");
  train->add_flag("--resume", resume, "continue from out.dir/state_last.fatb");
  train->add_option("--stop-after", stop_after, "run at most N epochs this invocation");
  train->add_flag("--quiet", quiet, "suppress per-epoch progress");

  CommonOpts eval_opts;
  std::string checkpoint, attack = "pgd10", eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a saved model");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "model .fatb file")->required();
  eval->add_option("--attack", attack, "clean, fgsm, pgd10, pgd20 or pgd50");
  eval->add_option("--out", eval_out, "write the JSON report here instead of stdout");

  std::string det_metrics, det_out;
  auto* detect = app.add_subcommand("detect", "scan a metrics.csv for robustness collapse");
  detect->add_option("--metrics", det_metrics, "metrics.csv from a training run")->required();
  detect->add_option("--out", det_out, "write the JSON verdict here instead of stdout");

  std::string plot_metrics, plot_kind = "acc_vs_epoch", plot_out;
  auto* plot = app.add_subcommand("plotdata", "reshape metrics.csv into tidy plot rows");
  plot->add_option("--metrics", plot_metrics, "metrics.csv from a training run")->required();
  plot->add_option("--kind", plot_kind, "acc_vs_epoch or delta_norm");
  plot->add_option("--out", plot_out, "write the CSV here instead of stdout");

  std::string gen_out = "data";
  int gen_n = 2500;
  uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gendata", "write a synthetic digit set as IDX files");
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--n", gen_n, "number of examples");
  gen->add_option("--seed", gen_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_opts, resume, stop_after, quiet);
    if (eval->parsed()) return cmd_eval(eval_opts, checkpoint, attack, eval_out);
    if (detect->parsed()) return cmd_detect(det_metrics, det_out);
    if (plot->parsed()) return cmd_plotdata(plot_metrics, plot_kind, plot_out);
    if (gen->parsed()) return cmd_gendata(gen_out, gen_n, gen_seed);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
