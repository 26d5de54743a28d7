#pragma once

// Training loop, evaluation and the ablation harness.

#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "glahrr/checkpoint.hpp"
#include "glahrr/dataset.hpp"
#include "glahrr/metrics.hpp"
#include "glahrr/optim.hpp"

namespace glahrr {

struct TrainConfig {
  fs::path train_manifest;
  fs::path eval_manifest;  // empty: evaluate on the training set
  int crop_h = 200;
  int crop_w = 300;
  int batch_size = 4;
  int epochs = 200;
  double base_lr = 1e-4;
  double poly_power = 0.9;
  int halve_at_epoch = 100;
  std::uint64_t seed = 0;
  LossWeights loss;
  VariantConfig variant;
  fs::path checkpoint_dir = "checkpoints";
  fs::path log_dir = "logs";
  int eval_every = 10;  // epochs between checkpoints; 0 disables intermediate ones
  long max_steps = 0;   // 0: run all epochs
  int precision = 32;   // 32 or 64

  Schedule schedule() const { return {base_lr, poly_power, epochs, halve_at_epoch}; }

  void validate() const {
    if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(poly_power > 0 && poly_power <= 2)) throw ConfigError("poly_power must lie in (0, 2]");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (crop_h < 1 || crop_w < 1) throw ConfigError("crop size must be positive");
    if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
    if (eval_every < 0 || max_steps < 0) throw ConfigError("eval_every and max_steps must be >= 0");
    variant.validate();
  }
};

inline void to_json(nlohmann::json& j, const VariantConfig& v) {
  j = {{"use_sca", v.use_sca}, {"use_add", v.use_add}, {"use_mul", v.use_mul},
       {"use_sa", v.use_sa},   {"use_ca", v.use_ca},   {"extra_conv_when_no_attn", v.extra_conv_when_no_attn}};
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"train_manifest", c.train_manifest.string()},
       {"eval_manifest", c.eval_manifest.string()},
       {"crop_h", c.crop_h},
       {"crop_w", c.crop_w},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"base_lr", c.base_lr},
       {"poly_power", c.poly_power},
       {"halve_at_epoch", c.halve_at_epoch},
       {"seed", c.seed},
       {"loss_weights", {c.loss.sca, c.loss.add, c.loss.mul, c.loss.mse, c.loss.edge}},
       {"variant", c.variant},
       {"checkpoint_dir", c.checkpoint_dir.string()},
       {"log_dir", c.log_dir.string()},
       {"eval_every", c.eval_every},
       {"max_steps", c.max_steps},
       {"precision", c.precision}};
}

// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void merge_config(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "train_manifest") c.train_manifest = value.get<std::string>();
      else if (key == "eval_manifest") c.eval_manifest = value.get<std::string>();
      else if (key == "crop_h") c.crop_h = value.get<int>();
      else if (key == "crop_w") c.crop_w = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "base_lr") c.base_lr = value.get<double>();
      else if (key == "poly_power") c.poly_power = value.get<double>();
      else if (key == "halve_at_epoch") c.halve_at_epoch = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "checkpoint_dir") c.checkpoint_dir = value.get<std::string>();
      else if (key == "log_dir") c.log_dir = value.get<std::string>();
      else if (key == "eval_every") c.eval_every = value.get<int>();
      else if (key == "max_steps") c.max_steps = value.get<long>();
      else if (key == "precision") c.precision = value.get<int>();
      else if (key == "loss_weights") {
        const auto w = value.get<std::vector<double>>();
        if (w.size() != 5) throw ConfigError("loss_weights needs five values (lambda0..lambda4)");
        c.loss = {w[0], w[1], w[2], w[3], w[4]};
      } else if (key == "variant") {
        if (value.is_string()) {
          c.variant = variant_by_name(value.get<std::string>());
        } else {
          VariantConfig v;
          v.use_sca = value.value("use_sca", v.use_sca);
          v.use_add = value.value("use_add", v.use_add);
          v.use_mul = value.value("use_mul", v.use_mul);
          v.use_sa = value.value("use_sa", v.use_sa);
          v.use_ca = value.value("use_ca", v.use_ca);
          v.extra_conv_when_no_attn = value.value("extra_conv_when_no_attn", v.extra_conv_when_no_attn);
          c.variant = v;
        }
      } else {
        throw ConfigError("unknown train config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
}

inline TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("config not found: " + path.string());
  TrainConfig c;
  try {
    merge_config(c, nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

struct StepRecord {
  int epoch = 0;
  long step = 0;  // global, starting at 0
  double lr = 0;
  LossReport loss;
};

inline void write_log_header(std::ostream& out) {
  out << "epoch\tstep\tlr\tl_sca\tl_add\tl_mul\tl_inter\tl_mse\tl_edge\tl_final\tl_total\n";
}

inline void write_log_line(std::ostream& out, const StepRecord& r) {
  const LossReport& l = r.loss;
  out << r.epoch << '\t' << r.step << '\t' << std::setprecision(10) << r.lr << '\t' << l.l_sca << '\t' << l.l_add
      << '\t' << l.l_mul << '\t' << l.l_inter << '\t' << l.l_mse << '\t' << l.l_edge << '\t' << l.l_final << '\t'
      << l.l_total << '\n';
}

// One optimizer step on a batch. Returns the loss before the update.
template <typename T>
LossReport train_step(GlaHrrModel<T>& model, Adam<T>& opt, const Tensor<T>& rain, const Tensor<T>& clean,
                      const LossWeights& weights, double lr) {
  const ParamList<T> params = model.params();
  zero_grads(params);
  const ModelOutput<T> out = model.forward(rain);
  OutputGrads<T> grads;
  const LossReport r = total_loss(out, clean, weights, &grads);
  if (!std::isfinite(r.l_total)) throw DivergenceError("non-finite loss");
  model.backward(grads);
  opt.step(lr);
  return r;
}

template <typename T>
struct TrainOutcome {
  std::unique_ptr<GlaHrrModel<T>> model;
  fs::path checkpoint;
  fs::path log;
  long steps = 0;
  StepRecord last;
};

using StepCallback = std::function<void(const StepRecord&)>;

template <typename T>
TrainOutcome<T> train_model(const TrainConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  const PairedDataset ds = read_manifest(cfg.train_manifest);
  if (ds.empty()) throw EmptyDatasetError("training set " + cfg.train_manifest.string() + " is empty");

  TrainOutcome<T> result;
  result.model = build_variant<T>(cfg.variant, cfg.seed);
  GlaHrrModel<T>& model = *result.model;
  Adam<T> opt(model.params());

  std::error_code ec;
  fs::create_directories(cfg.log_dir, ec);
  fs::create_directories(cfg.checkpoint_dir, ec);
  result.log = cfg.log_dir / "train.tsv";
  std::ofstream log(result.log, std::ios::binary);
  if (!log) throw IoError("cannot write training log " + result.log.string());
  write_log_header(log);

  const int steps_per_epoch = static_cast<int>((ds.size() + cfg.batch_size - 1) / cfg.batch_size);
  const Schedule schedule = cfg.schedule();
  long step = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    auto batches = make_batches<T>(ds, cfg.batch_size, cfg.crop_h, cfg.crop_w, mix_seed(cfg.seed, 1000 + epoch));
    int in_epoch = 0;
    while (auto batch = batches.next()) {
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lr = learning_rate(epoch, in_epoch, steps_per_epoch, schedule);
      try {
        rec.loss = train_step(model, opt, batch->rain, batch->clean, cfg.loss, rec.lr);
        for (Param<T>* p : model.params())
          if (!all_finite(p->value)) throw DivergenceError("parameter " + p->name + " became non-finite");
      } catch (const DivergenceError& e) {
        const fs::path diag = cfg.checkpoint_dir / "diverged.ckpt";
        save_checkpoint(model, diag);
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step) +
                              "; diagnostic checkpoint " + diag.string());
      }
      write_log_line(log, rec);
      if (on_step) on_step(rec);
      result.last = rec;
      ++step;
      ++in_epoch;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && !done) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << (epoch + 1) << ".ckpt";
      save_checkpoint(model, cfg.checkpoint_dir / name.str());
    }
  }
  result.steps = step;
  result.checkpoint = cfg.checkpoint_dir / "final.ckpt";
  save_checkpoint(model, result.checkpoint);
  return result;
}

struct MetricRow {
  std::string image_id;
  double psnr_db = 0;
  double ssim = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double mean_psnr = 0;
  double mean_ssim = 0;
  std::size_t parameter_count = 0;
  double seconds_per_image = 0;

  void finalize() {
    double p = 0, s = 0;
    for (const auto& r : rows) {
      p += r.psnr_db;
      s += r.ssim;
    }
    mean_psnr = rows.empty() ? 0 : p / double(rows.size());
    mean_ssim = rows.empty() ? 0 : s / double(rows.size());
  }
};

// Full-image inference on every pair; outputs clamped to [0,1] before scoring.
template <typename T>
MetricReport evaluate(GlaHrrModel<T>& model, const PairedDataset& ds) {
  if (ds.empty()) throw EmptyDatasetError("evaluation set '" + ds.name + "' is empty");
  MetricReport rep;
  rep.parameter_count = model.parameter_count();
  double seconds = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto [rain, clean] = load_pair<T>(ds, i);
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor<T> out = clamp01(model.forward(rain).I);
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.rows.push_back({ds.pairs[i].first.stem().string(), psnr(out, clean), ssim(out, clean)});
  }
  rep.seconds_per_image = seconds / double(ds.size());
  rep.finalize();
  return rep;
}

// Scores the rain images themselves, i.e. a model whose output is its input.
inline MetricReport evaluate_identity(const PairedDataset& ds) {
  if (ds.empty()) throw EmptyDatasetError("evaluation set '" + ds.name + "' is empty");
  MetricReport rep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto [rain, clean] = load_pair<double>(ds, i);
    rep.rows.push_back({ds.pairs[i].first.stem().string(), psnr(rain, clean), ssim(rain, clean)});
  }
  rep.finalize();
  return rep;
}

inline MetricReport evaluate_checkpoint(const fs::path& checkpoint, const PairedDataset& ds) {
  if (read_checkpoint_header(checkpoint).dtype == DType::f64) {
    auto model = load_checkpoint<double>(checkpoint);
    return evaluate(*model, ds);
  }
  auto model = load_checkpoint<float>(checkpoint);
  return evaluate(*model, ds);
}

inline void write_metric_report(const MetricReport& rep, std::ostream& out) {
  out << "image_id\tpsnr_db\tssim\n" << std::setprecision(10);
  for (const auto& r : rep.rows) out << r.image_id << '\t' << r.psnr_db << '\t' << r.ssim << '\n';
  out << "mean\t" << rep.mean_psnr << '\t' << rep.mean_ssim << '\n';
}

enum class AblationGrid { subnets, sca_block };

inline AblationGrid ablation_grid_from_string(const std::string& s) {
  if (s == "subnets") return AblationGrid::subnets;
  if (s == "sca_block" || s == "sca-block") return AblationGrid::sca_block;
  throw ConfigError("unknown ablation grid '" + s + "' (expected subnets or sca_block)");
}

struct AblationRow {
  std::string variant;
  double psnr_db = 0;
  double ssim = 0;
  std::size_t parameters = 0;
};

// Trains and evaluates every variant of the grid with otherwise identical
// settings; each variant gets its own checkpoint and log subdirectory.
template <typename T>
std::vector<AblationRow> run_ablation(AblationGrid grid, const TrainConfig& cfg,
                                      const std::function<void(const AblationRow&)>& on_row = {},
                                      const StepCallback& on_step = {}) {
  const auto& names = grid == AblationGrid::subnets ? subnet_grid() : sca_block_grid();
  const PairedDataset eval_set = read_manifest(cfg.eval_manifest.empty() ? cfg.train_manifest : cfg.eval_manifest);
  std::vector<AblationRow> rows;
  for (const std::string& name : names) {
    TrainConfig run = cfg;
    run.variant = variant_by_name(name);
    run.checkpoint_dir = cfg.checkpoint_dir / name;
    run.log_dir = cfg.log_dir / name;
    TrainOutcome<T> trained = train_model<T>(run, on_step);
    const MetricReport rep = evaluate(*trained.model, eval_set);
    rows.push_back({name, rep.mean_psnr, rep.mean_ssim, rep.parameter_count});
    if (on_row) on_row(rows.back());
  }
  return rows;
}

inline void write_ablation_report(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "variant\tpsnr_db\tssim\tparameters\n" << std::setprecision(10);
  for (const auto& r : rows) out << r.variant << '\t' << r.psnr_db << '\t' << r.ssim << '\t' << r.parameters << '\n';
}

}  // namespace glahrr
