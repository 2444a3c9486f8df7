#include "fastat/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "fastat/attacks.hpp"
#include "fastat/model_io.hpp"
#include "json.hpp"

namespace fastat {

namespace fs = std::filesystem;

void ExperimentConfig::validate() const {
  train.validate();
  if (eval_batch < 1) throw std::invalid_argument("config key 'eval.batch_size': must be >= 1");
  if (eval_pgd_steps < 1) throw std::invalid_argument("config key 'eval.pgd_steps': must be >= 1");
  if (checkpoint_every < 0) {
    throw std::invalid_argument("config key 'out.checkpoint_every': must be >= 0");
  }
  if (out_dir.empty()) throw std::invalid_argument("config key 'out.dir': must not be empty");
  if (data.kind == DataConfig::Kind::idx && (data.idx_images.empty() || data.idx_labels.empty())) {
    throw std::invalid_argument(
        "config: dataset.kind=idx needs dataset.idx.images and dataset.idx.labels");
  }
  if (data.kind == DataConfig::Kind::cifar10 && data.cifar_path.empty()) {
    throw std::invalid_argument("config: dataset.kind=cifar10 needs dataset.cifar.path");
  }
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  return static_cast<int>(parse_i64(key, v));
}

double parse_num(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  return out;
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  DataConfig& d = cfg.data;
  TrainConfig& t = cfg.train;
  ModelSpec& m = cfg.model;

  if (key == "dataset.kind") {
    if (value == "blobs") d.kind = DataConfig::Kind::blobs;
    else if (value == "digits") d.kind = DataConfig::Kind::digits;
    else if (value == "idx") d.kind = DataConfig::Kind::idx;
    else if (value == "cifar10") d.kind = DataConfig::Kind::cifar10;
    else throw std::invalid_argument("config key 'dataset.kind': unknown kind '" + value +
                                     "' (blobs, digits, idx, cifar10)");
  } else if (key == "dataset.blobs.classes") d.blobs_classes = parse_int(key, value);
  else if (key == "dataset.blobs.dim") d.blobs_dim = parse_int(key, value);
  else if (key == "dataset.blobs.n_per_class") d.blobs_n_per_class = parse_int(key, value);
  else if (key == "dataset.blobs.spread") d.blobs_spread = parse_num(key, value);
  else if (key == "dataset.digits.n") d.digits_n = parse_int(key, value);
  else if (key == "dataset.idx.images") d.idx_images = value;
  else if (key == "dataset.idx.labels") d.idx_labels = value;
  else if (key == "dataset.cifar.path") d.cifar_path = value;
  else if (key == "dataset.train_count") d.train_count = parse_int(key, value);
  else if (key == "dataset.eval_count") d.eval_count = parse_int(key, value);
  else if (key == "model.arch") {
    if (value == "mlp") m.arch = ModelSpec::Arch::mlp;
    else if (value == "conv") m.arch = ModelSpec::Arch::conv;
    else throw std::invalid_argument("config key 'model.arch': unknown arch '" + value +
                                     "' (mlp, conv)");
    cfg.arch_explicit = true;
  } else if (key == "model.mlp.hidden") {
    m.mlp_hidden = parse_int_list(key, value);
  } else if (key == "model.conv.c1") m.conv_c1 = parse_int(key, value);
  else if (key == "model.conv.c2") m.conv_c2 = parse_int(key, value);
  else if (key == "model.conv.fc") m.conv_fc = parse_int(key, value);
  else if (key == "train.method") t.method = method_from_string(value);
  else if (key == "train.epsilon") t.epsilon = static_cast<float>(parse_num(key, value));
  else if (key == "train.attack_alpha") t.attack_alpha = static_cast<float>(parse_num(key, value));
  else if (key == "train.pgd_steps") t.pgd_steps = parse_int(key, value);
  else if (key == "train.gamma") t.gamma = static_cast<float>(parse_num(key, value));
  else if (key == "train.beta") t.beta = static_cast<float>(parse_num(key, value));
  else if (key == "train.mu") t.mu = static_cast<float>(parse_num(key, value));
  else if (key == "train.schedule") {
    if (value == "multistep") t.schedule = LrSchedule::multistep;
    else if (value == "cyclic") t.schedule = LrSchedule::cyclic;
    else throw std::invalid_argument("config key 'train.schedule': unknown schedule '" + value +
                                     "' (multistep, cyclic)");
  } else if (key == "train.lr_base") t.lr_base = parse_num(key, value);
  else if (key == "train.lr_drop_factor") t.lr_drop_factor = parse_num(key, value);
  else if (key == "train.lr_drops") t.lr_drops = parse_int_list(key, value);
  else if (key == "train.lr_max") t.lr_max = parse_num(key, value);
  else if (key == "train.epochs") t.epochs = parse_int(key, value);
  else if (key == "train.batch_size") t.batch_size = parse_int(key, value);
  else if (key == "train.momentum") t.momentum = parse_num(key, value);
  else if (key == "train.weight_decay") t.weight_decay = parse_num(key, value);
  else if (key == "train.seed") t.seed = static_cast<uint64_t>(parse_i64(key, value));
  else if (key == "train.projection_mode") {
    if (value == "projected") t.projection_mode = ProjectionMode::projected;
    else if (value == "faithful") t.projection_mode = ProjectionMode::faithful;
    else throw std::invalid_argument("config key 'train.projection_mode': unknown mode '" + value +
                                     "' (projected, faithful)");
  } else if (key == "train.fusion_mode") {
    if (value == "pco") t.fusion_mode = FusionMode::pco;
    else if (value == "amplified_clean") t.fusion_mode = FusionMode::amplified_clean;
    else if (value == "plain_clean") t.fusion_mode = FusionMode::plain_clean;
    else throw std::invalid_argument("config key 'train.fusion_mode': unknown mode '" + value +
                                     "' (pco, amplified_clean, plain_clean)");
  } else if (key == "train.lambda_override") {
    t.lambda_override = static_cast<float>(parse_num(key, value));
  } else if (key == "train.mep_reset_every") t.mep_reset_every = parse_int(key, value);
  else if (key == "train.probability_space") t.probability_space = parse_bool(key, value);
  else if (key == "eval.batch_size") cfg.eval_batch = parse_int(key, value);
  else if (key == "eval.pgd_steps") cfg.eval_pgd_steps = parse_int(key, value);
  else if (key == "out.dir") cfg.out_dir = value;
  else if (key == "out.checkpoint_every") cfg.checkpoint_every = parse_int(key, value);
  else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void apply_line(ExperimentConfig& cfg, const std::string& raw, const std::string& where) {
  std::string line = raw;
  const size_t hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = trim(line);
  if (line.empty()) return;
  const size_t eq = line.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("config " + where + ": expected key = value, got '" + trim(raw) +
                                "'");
  }
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  if (key.empty()) throw std::invalid_argument("config " + where + ": empty key");
  try {
    apply_key(cfg, key, value);
  } catch (const std::invalid_argument& ex) {
    throw std::invalid_argument(std::string(ex.what()) + " (" + where + ")");
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_float(float v) { return format_double(static_cast<double>(v)); }

}  // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    apply_line(cfg, line, "line " + std::to_string(lineno));
  }
  for (const auto& ov : overrides) apply_line(cfg, ov, "override '" + ov + "'");
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::vector<std::pair<std::string, std::string>> config_to_pairs(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> p;
  const DataConfig& d = cfg.data;
  const TrainConfig& t = cfg.train;
  const ModelSpec& m = cfg.model;
  const char* kind = d.kind == DataConfig::Kind::blobs
                         ? "blobs"
                         : (d.kind == DataConfig::Kind::digits
                                ? "digits"
                                : (d.kind == DataConfig::Kind::idx ? "idx" : "cifar10"));
  p.emplace_back("dataset.kind", kind);
  if (d.kind == DataConfig::Kind::blobs) {
    p.emplace_back("dataset.blobs.classes", std::to_string(d.blobs_classes));
    p.emplace_back("dataset.blobs.dim", std::to_string(d.blobs_dim));
    p.emplace_back("dataset.blobs.n_per_class", std::to_string(d.blobs_n_per_class));
    p.emplace_back("dataset.blobs.spread", format_double(d.blobs_spread));
  }
  if (d.kind == DataConfig::Kind::digits) {
    p.emplace_back("dataset.digits.n", std::to_string(d.digits_n));
  }
  if (d.kind == DataConfig::Kind::idx) {
    p.emplace_back("dataset.idx.images", d.idx_images);
    p.emplace_back("dataset.idx.labels", d.idx_labels);
  }
  if (d.kind == DataConfig::Kind::cifar10) p.emplace_back("dataset.cifar.path", d.cifar_path);
  p.emplace_back("dataset.train_count", std::to_string(d.train_count));
  p.emplace_back("dataset.eval_count", std::to_string(d.eval_count));
  p.emplace_back("model.arch", m.arch == ModelSpec::Arch::mlp ? "mlp" : "conv");
  if (m.arch == ModelSpec::Arch::mlp) {
    std::string h;
    for (size_t i = 0; i < m.mlp_hidden.size(); ++i) {
      if (i) h += ",";
      h += std::to_string(m.mlp_hidden[i]);
    }
    p.emplace_back("model.mlp.hidden", h);
  } else {
    p.emplace_back("model.conv.c1", std::to_string(m.conv_c1));
    p.emplace_back("model.conv.c2", std::to_string(m.conv_c2));
    p.emplace_back("model.conv.fc", std::to_string(m.conv_fc));
  }
  p.emplace_back("train.method", to_string(t.method));
  p.emplace_back("train.epsilon", format_float(t.epsilon));
  p.emplace_back("train.attack_alpha", format_float(t.alpha()));
  p.emplace_back("train.pgd_steps", std::to_string(t.pgd_steps));
  p.emplace_back("train.gamma", format_float(t.gamma));
  p.emplace_back("train.beta", format_float(t.beta));
  p.emplace_back("train.mu", format_float(t.mu));
  p.emplace_back("train.schedule", t.schedule == LrSchedule::multistep ? "multistep" : "cyclic");
  p.emplace_back("train.lr_base", format_double(t.lr_base));
  p.emplace_back("train.lr_drop_factor", format_double(t.lr_drop_factor));
  {
    std::string drops;
    for (size_t i = 0; i < t.lr_drops.size(); ++i) {
      if (i) drops += ",";
      drops += std::to_string(t.lr_drops[i]);
    }
    p.emplace_back("train.lr_drops", drops);
  }
  p.emplace_back("train.lr_max", format_double(t.lr_max));
  p.emplace_back("train.epochs", std::to_string(t.epochs));
  p.emplace_back("train.batch_size", std::to_string(t.batch_size));
  p.emplace_back("train.momentum", format_double(t.momentum));
  p.emplace_back("train.weight_decay", format_double(t.weight_decay));
  p.emplace_back("train.seed", std::to_string(t.seed));
  p.emplace_back("train.projection_mode",
                 t.projection_mode == ProjectionMode::projected ? "projected" : "faithful");
  p.emplace_back("train.fusion_mode",
                 t.fusion_mode == FusionMode::pco
                     ? "pco"
                     : (t.fusion_mode == FusionMode::amplified_clean ? "amplified_clean"
                                                                     : "plain_clean"));
  p.emplace_back("train.lambda_override", format_float(t.lambda_override));
  p.emplace_back("train.mep_reset_every", std::to_string(t.mep_reset_every));
  p.emplace_back("train.probability_space", t.probability_space ? "true" : "false");
  p.emplace_back("eval.batch_size", std::to_string(cfg.eval_batch));
  p.emplace_back("eval.pgd_steps", std::to_string(cfg.eval_pgd_steps));
  p.emplace_back("out.dir", cfg.out_dir);
  p.emplace_back("out.checkpoint_every", std::to_string(cfg.checkpoint_every));
  return p;
}

DataSplit load_data(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  Dataset full;
  switch (d.kind) {
    case DataConfig::Kind::blobs:
      full = gen_synthetic_blobs(d.blobs_classes, d.blobs_dim, d.blobs_n_per_class, d.blobs_spread,
                                 cfg.train.seed);
      break;
    case DataConfig::Kind::digits:
      full = gen_synthetic_digits(d.digits_n, cfg.train.seed);
      break;
    case DataConfig::Kind::idx:
      full = load_idx(d.idx_images, d.idx_labels);
      break;
    case DataConfig::Kind::cifar10:
      full = load_cifar10_binary(d.cifar_path);
      break;
  }
  if (full.size() == 0) throw std::runtime_error("config: dataset is empty");

  const int n = full.size();
  int tc = d.train_count;
  if (tc <= 0 || tc > n) tc = n;
  DataSplit split;
  split.train = subset(full, 0, tc);
  const int remaining = n - tc;
  int ec = d.eval_count;
  if (ec > 0) {
    if (remaining >= ec) {
      split.eval = subset(full, tc, ec);
    } else if (remaining == 0) {
      split.eval = subset(full, 0, std::min(ec, tc));
    } else {
      throw std::invalid_argument("config key 'dataset.eval_count': " + std::to_string(ec) +
                                  " exceeds the " + std::to_string(remaining) +
                                  " examples left after dataset.train_count");
    }
  } else {
    if (remaining > 0) {
      split.eval = subset(full, tc, std::min(remaining, 1000));
    } else {
      split.eval = subset(full, 0, std::min(tc, 1000));
    }
  }
  return split;
}

ModelSpec resolve_model_spec(const ExperimentConfig& cfg, const Dataset& train) {
  ModelSpec spec = cfg.model;
  const auto& es = train.example_shape;
  if (es.size() == 3) {
    spec.channels = es[0];
    spec.height = es[1];
    spec.width = es[2];
    if (!cfg.arch_explicit) spec.arch = ModelSpec::Arch::conv;
  } else if (es.size() == 1) {
    spec.channels = 1;
    spec.height = 1;
    spec.width = es[0];
    if (!cfg.arch_explicit) spec.arch = ModelSpec::Arch::mlp;
    if (spec.arch == ModelSpec::Arch::conv) {
      throw std::invalid_argument("config key 'model.arch': conv needs image-shaped examples, "
                                  "dataset provides flat features");
    }
  } else {
    throw std::runtime_error("dataset example shape unsupported by the model layer");
  }
  spec.num_classes = train.num_classes;
  spec.validate();
  return spec;
}

const char* kMetricsHeader =
    "epoch,clean_acc,fgsm_acc,pgd10_acc,train_loss,ce_component,reg_component,lambda_mean,"
    "lambda_min,lambda_max,delta_l2_mean,lr,wall_time_s";

std::string metrics_row(const EpochMetrics& m) {
  std::string r = std::to_string(m.epoch);
  for (double v : {m.clean_acc, m.fgsm_acc, m.pgd10_acc, m.train_loss, m.ce_component,
                   m.reg_component, m.lambda_mean, m.lambda_min, m.lambda_max, m.delta_l2_mean,
                   m.lr, m.wall_time_s}) {
    r += ",";
    r += format_double(v);
  }
  return r;
}

std::vector<EpochMetrics> parse_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("metrics: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("metrics: '" + path + "' is empty");
  if (line != kMetricsHeader) {
    throw std::runtime_error("metrics: '" + path + "' header does not match the expected schema");
  }
  std::vector<EpochMetrics> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 13) {
      throw std::runtime_error("metrics: '" + path + "' line " + std::to_string(lineno) + " has " +
                               std::to_string(f.size()) + " fields, expected 13");
    }
    EpochMetrics m;
    try {
      m.epoch = std::stoi(f[0]);
      m.clean_acc = std::stod(f[1]);
      m.fgsm_acc = std::stod(f[2]);
      m.pgd10_acc = std::stod(f[3]);
      m.train_loss = std::stod(f[4]);
      m.ce_component = std::stod(f[5]);
      m.reg_component = std::stod(f[6]);
      m.lambda_mean = std::stod(f[7]);
      m.lambda_min = std::stod(f[8]);
      m.lambda_max = std::stod(f[9]);
      m.delta_l2_mean = std::stod(f[10]);
      m.lr = std::stod(f[11]);
      m.wall_time_s = std::stod(f[12]);
    } catch (...) {
      throw std::runtime_error("metrics: '" + path + "' line " + std::to_string(lineno) +
                               " is not numeric");
    }
    out.push_back(m);
  }
  return out;
}

std::string emit_plot_data(const std::vector<EpochMetrics>& history, const std::string& kind) {
  std::string out = "epoch,series,value\n";
  if (kind == "acc_vs_epoch") {
    for (const auto& m : history) {
      out += std::to_string(m.epoch) + ",clean_acc," + format_double(m.clean_acc) + "\n";
      out += std::to_string(m.epoch) + ",fgsm_acc," + format_double(m.fgsm_acc) + "\n";
      out += std::to_string(m.epoch) + ",pgd10_acc," + format_double(m.pgd10_acc) + "\n";
    }
  } else if (kind == "delta_norm") {
    for (const auto& m : history) {
      out += std::to_string(m.epoch) + ",delta_l2_mean," + format_double(m.delta_l2_mean) + "\n";
    }
  } else {
    throw std::invalid_argument("plotdata: unknown kind '" + kind +
                                "' (acc_vs_epoch, delta_norm)");
  }
  return out;
}

namespace {

nlohmann::ordered_json metrics_to_json(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["clean_acc"] = m.clean_acc;
  j["fgsm_acc"] = m.fgsm_acc;
  j["pgd10_acc"] = m.pgd10_acc;
  j["train_loss"] = m.train_loss;
  j["ce_component"] = m.ce_component;
  j["reg_component"] = m.reg_component;
  j["lambda_mean"] = m.lambda_mean;
  j["lambda_min"] = m.lambda_min;
  j["lambda_max"] = m.lambda_max;
  j["delta_l2_mean"] = m.delta_l2_mean;
  j["lr"] = m.lr;
  j["wall_time_s"] = m.wall_time_s;
  return j;
}

nlohmann::ordered_json overfit_json(const OverfitVerdict& v) {
  nlohmann::ordered_json j;
  j["detected"] = v.detected;
  if (v.detected) j["epoch"] = v.epoch;
  else j["epoch"] = nullptr;
  j["reason"] = to_string(v.reason);
  return j;
}

}  // namespace

std::string overfit_to_json(const OverfitVerdict& v) { return overfit_json(v).dump(2); }

RunResult run_experiment(const ExperimentConfig& cfg, bool resume, int stop_after, bool quiet) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const std::string metrics_path = cfg.out_dir + "/metrics.csv";
  const std::string state_path = cfg.out_dir + "/state_last.fatb";

  DataSplit split = load_data(cfg);
  const ModelSpec spec = resolve_model_spec(cfg, split.train);

  RunResult rr;
  TrainState state;
  if (resume && fs::exists(state_path)) {
    state = load_train_state(state_path);
    rr.history = parse_metrics_csv(metrics_path);
    if (static_cast<int>(rr.history.size()) != state.epoch) {
      throw std::runtime_error("resume: metrics.csv has " + std::to_string(rr.history.size()) +
                               " rows but checkpoint is at epoch " + std::to_string(state.epoch));
    }
    if (state.seed != cfg.train.seed) {
      throw std::runtime_error("resume: checkpoint seed does not match config seed");
    }
  } else {
    state = init_train_state(spec, cfg.train, split.train.size());
    std::ofstream os(metrics_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + metrics_path + "' for writing");
    os << kMetricsHeader << "\n";
  }

  double best_pgd = -1.0;
  for (const auto& m : rr.history) best_pgd = std::max(best_pgd, m.pgd10_acc);

  const float eps = cfg.train.epsilon;
  const auto fgsm_cfg = fgsm_eval_attack(eps);
  const auto pgd_cfg = pgd_eval_attack(eps, cfg.eval_pgd_steps);

  int ran = 0;
  try {
    while (state.epoch < cfg.train.epochs && (stop_after == 0 || ran < stop_after)) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochMetrics m = train_epoch(state, split.train, cfg.train);
      m.clean_acc =
          eval_accuracy(state.model, split.eval, std::nullopt, cfg.eval_batch, cfg.train.seed);
      m.fgsm_acc =
          eval_accuracy(state.model, split.eval, fgsm_cfg, cfg.eval_batch, cfg.train.seed);
      m.pgd10_acc = eval_accuracy(state.model, split.eval, pgd_cfg, cfg.eval_batch, cfg.train.seed);
      m.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      {
        std::ofstream os(metrics_path, std::ios::app);
        if (!os) throw std::runtime_error("cannot append to '" + metrics_path + "'");
        os << metrics_row(m) << "\n";
      }
      rr.history.push_back(m);

      if (m.pgd10_acc > best_pgd) {
        best_pgd = m.pgd10_acc;
        save_model(cfg.out_dir + "/model_best.fatb", state.model);
      }
      save_model(cfg.out_dir + "/model_last.fatb", state.model);
      save_train_state(state_path, state);
      if (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0) {
        save_train_state(cfg.out_dir + "/state_epoch" + std::to_string(state.epoch) + ".fatb",
                         state);
      }
      if (!quiet) {
        std::fprintf(stderr, "[%s %d/%d] clean=%.3f fgsm=%.3f pgd10=%.3f loss=%.4f (%.1fs)\n",
                     to_string(cfg.train.method), m.epoch + 1, cfg.train.epochs, m.clean_acc,
                     m.fgsm_acc, m.pgd10_acc, m.train_loss, m.wall_time_s);
      }
      ++ran;
    }
  } catch (const std::exception& ex) {
    rr.exit_status = 1;
    rr.error = ex.what();
  }

  if (!rr.history.empty()) rr.overfit = detect_catastrophic_overfitting(rr.history);

  nlohmann::ordered_json summary;
  if (!rr.history.empty()) {
    size_t best_i = 0;
    for (size_t i = 1; i < rr.history.size(); ++i) {
      if (rr.history[i].pgd10_acc > rr.history[best_i].pgd10_acc) best_i = i;
    }
    summary["best"] = metrics_to_json(rr.history[best_i]);
    summary["last"] = metrics_to_json(rr.history.back());
  } else {
    summary["best"] = nullptr;
    summary["last"] = nullptr;
  }
  summary["overfit"] = overfit_json(rr.overfit);
  summary["completed"] = (state.epoch == cfg.train.epochs) && rr.exit_status == 0;
  if (!rr.error.empty()) summary["error"] = rr.error;
  nlohmann::ordered_json echo;
  for (const auto& [k, v] : config_to_pairs(cfg)) echo[k] = v;
  summary["config_echo"] = echo;
  {
    std::ofstream os(cfg.out_dir + "/summary.json", std::ios::trunc);
    os << summary.dump(2) << "\n";
  }
  return rr;
}

}  // namespace fastat
