// gla_hrr: synthesize data, train, evaluate, derain, ablate, inspect, params.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glahrr/glahrr.hpp"

namespace fs = std::filesystem;
using namespace glahrr;

namespace {

// Raised for argument combinations CLI11 cannot express; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A dataset argument is either a manifest file or a directory holding manifest.tsv.
fs::path manifest_path(const std::string& given) {
  std::string root = given;
  if (root.empty()) {
    const char* env = std::getenv("GLA_HRR_DATA_DIR");
    if (!env || !*env) throw UsageError("no dataset given: pass --data or set GLA_HRR_DATA_DIR");
    root = env;
  }
  const fs::path p = root;
  return fs::is_directory(p) ? p / "manifest.tsv" : p;
}

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

struct TrainFlags {
  std::string config, data, eval_data, out, variant;
  int epochs = 0, batch_size = 0, crop_h = 0, crop_w = 0, halve_at = 0, eval_every = 0, precision = 32;
  long max_steps = 0;
  double lr = 0, poly_power = 0;
  std::uint64_t seed = 0;
  std::vector<double> lambdas;
  std::vector<CLI::Option*> opts;

  CLI::Option* find(const std::string& name) const {
    for (auto* o : opts)
      if (o->get_name() == name) return o;
    return nullptr;
  }
  bool given(const std::string& name) const {
    const auto* o = find(name);
    return o && o->count() > 0;
  }
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  auto& o = f.opts;
  o.push_back(cmd->add_option("--config", f.config, "JSON train config; flags override it")->check(CLI::ExistingFile));
  o.push_back(cmd->add_option("--data", f.data, "training manifest or dataset directory"));
  o.push_back(cmd->add_option("--eval-data", f.eval_data, "evaluation manifest or dataset directory"));
  o.push_back(cmd->add_option("--out", f.out, "output directory")->required());
  o.push_back(cmd->add_option("--epochs", f.epochs)->check(CLI::PositiveNumber));
  o.push_back(cmd->add_option("--batch-size", f.batch_size)->check(CLI::PositiveNumber));
  o.push_back(cmd->add_option("--crop-h", f.crop_h)->check(CLI::PositiveNumber));
  o.push_back(cmd->add_option("--crop-w", f.crop_w)->check(CLI::PositiveNumber));
  o.push_back(cmd->add_option("--lr", f.lr, "base learning rate"));
  o.push_back(cmd->add_option("--poly-power", f.poly_power));
  o.push_back(cmd->add_option("--halve-at", f.halve_at, "epoch from which the learning rate is halved"));
  o.push_back(cmd->add_option("--eval-every", f.eval_every, "epochs between checkpoints")->check(CLI::NonNegativeNumber));
  o.push_back(cmd->add_option("--max-steps", f.max_steps, "stop after this many steps (0: no limit)")
                  ->check(CLI::NonNegativeNumber));
  o.push_back(cmd->add_option("--lambdas", f.lambdas, "five loss weights")->expected(5));
  o.push_back(cmd->add_option("--seed", f.seed));
  o.push_back(cmd->add_option("--precision", f.precision)->check(CLI::IsMember({32, 64})));
}

TrainConfig resolve_train_config(const TrainFlags& f, TrainConfig base) {
  TrainConfig cfg = std::move(base);
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(f.config + ": " + e.what());
    }
    merge_config(cfg, j);
  }
  if (f.given("--data") || cfg.train_manifest.empty()) cfg.train_manifest = manifest_path(f.data);
  if (f.given("--eval-data")) cfg.eval_manifest = manifest_path(f.eval_data);
  if (f.given("--epochs")) cfg.epochs = f.epochs;
  if (f.given("--batch-size")) cfg.batch_size = f.batch_size;
  if (f.given("--crop-h")) cfg.crop_h = f.crop_h;
  if (f.given("--crop-w")) cfg.crop_w = f.crop_w;
  if (f.given("--lr")) cfg.base_lr = f.lr;
  if (f.given("--poly-power")) cfg.poly_power = f.poly_power;
  if (f.given("--halve-at")) cfg.halve_at_epoch = f.halve_at;
  if (f.given("--eval-every")) cfg.eval_every = f.eval_every;
  if (f.given("--max-steps")) cfg.max_steps = f.max_steps;
  if (f.given("--seed")) cfg.seed = f.seed;
  if (f.given("--precision")) cfg.precision = f.precision;
  if (f.given("--lambdas")) cfg.loss = {f.lambdas[0], f.lambdas[1], f.lambdas[2], f.lambdas[3], f.lambdas[4]};
  if (f.given("--variant")) cfg.variant = variant_by_name(f.variant);
  cfg.checkpoint_dir = fs::path(f.out) / "checkpoints";
  cfg.log_dir = fs::path(f.out) / "logs";
  cfg.validate();
  return cfg;
}

void write_resolved_config(const TrainConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  std::ofstream f(out / "config.json");
  f << nlohmann::json(cfg).dump(2) << '\n';
}

void print_progress(const StepRecord& r) {
  if (r.step % 10 == 0)
    std::cerr << "epoch " << r.epoch << " step " << r.step << " lr " << r.lr << " loss " << r.loss.l_total << '\n';
}

int run_train(const TrainFlags& f) {
  const TrainConfig cfg = resolve_train_config(f, {});
  write_resolved_config(cfg, f.out);
  fs::path ckpt;
  long steps = 0;
  if (cfg.precision == 64) {
    auto r = train_model<double>(cfg, print_progress);
    ckpt = r.checkpoint;
    steps = r.steps;
  } else {
    auto r = train_model<float>(cfg, print_progress);
    ckpt = r.checkpoint;
    steps = r.steps;
  }
  std::cout << "trained " << steps << " steps; checkpoint " << ckpt.string() << '\n';
  return 0;
}

int run_ablate(const TrainFlags& f, const std::string& grid_name) {
  const AblationGrid grid = ablation_grid_from_string(grid_name);
  // Desk-scale defaults; a config file or flags can override them.
  TrainConfig base;
  base.crop_h = 64;
  base.crop_w = 96;
  base.epochs = 30;
  base.halve_at_epoch = 15;
  base.eval_every = 0;
  const TrainConfig cfg = resolve_train_config(f, base);
  write_resolved_config(cfg, f.out);
  auto on_row = [](const AblationRow& r) {
    std::cerr << r.variant << ": " << r.psnr_db << " dB, ssim " << r.ssim << ", " << r.parameters << " params\n";
  };
  const auto rows = cfg.precision == 64 ? run_ablation<double>(grid, cfg, on_row) : run_ablation<float>(grid, cfg, on_row);
  std::ofstream out(fs::path(f.out) / "ablation.tsv");
  write_ablation_report(rows, out);
  write_ablation_report(rows, std::cout);
  return 0;
}

template <typename T>
void derain_one(GlaHrrModel<T>& model, const fs::path& in, const fs::path& out, const fs::path& maps_dir) {
  const Tensor<T> rain = load_image<T>(in);
  const ModelOutput<T> res = model.forward(rain);
  save_image(clamp01(res.I), out);
  if (maps_dir.empty()) return;
  const std::string stem = out.stem().string();
  const int n = model.config().subnet_count();
  if (n > 1)
    for (int k = 0; k < n; ++k)
      save_gray(res.weights[k], 0, 0, 0.0, 1.0, maps_dir / (stem + "_W" + std::to_string(k) + ".png"));
  // Residues are mapped to [0,1]: R_A from [-1,1], R_M from [0,2].
  if (!res.R_A.empty()) {
    Tensor<T> v = res.R_A;
    for (T& x : v.values()) x = (x + T(1)) / T(2);
    save_image(v, maps_dir / (stem + "_RA.png"));
  }
  if (!res.R_M.empty()) {
    Tensor<T> v = res.R_M;
    for (T& x : v.values()) x /= T(2);
    save_image(v, maps_dir / (stem + "_RM.png"));
  }
}

template <typename T>
int derain_with(const fs::path& ckpt, const fs::path& in, const fs::path& out, bool maps) {
  auto model = load_checkpoint<T>(ckpt);
  if (fs::is_directory(in)) {
    const auto files = png_files(in);
    if (files.empty()) throw EmptyDatasetError("no PNG files in " + in.string());
    for (const auto& file : files) {
      derain_one(*model, file, out / file.filename(), maps ? out / "maps" : fs::path());
      std::cerr << file.filename().string() << '\n';
    }
  } else {
    const fs::path maps_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
    derain_one(*model, in, out, maps ? maps_dir : fs::path());
  }
  return 0;
}

template <typename T>
int inspect_with(const fs::path& ckpt, const fs::path& in, const fs::path& out, const std::vector<std::string>& which,
                 std::vector<int> channels) {
  auto model = load_checkpoint<T>(ckpt);
  const Tensor<T> rain = load_image<T>(in);
  model->forward(rain);
  fs::create_directories(out);
  std::ofstream ranges(out / "ranges.tsv");
  ranges << "feature\tchannel\tmin\tmax\n" << std::setprecision(9);
  for (const std::string& name : which) {
    const Tensor<T>* feat = nullptr;
    if (name == "sca") feat = &model->sca_features();
    else if (name == "add") feat = &model->additive_features();
    else if (name == "mul") feat = &model->multiplicative_features();
    else throw ConfigError("unknown feature '" + name + "' (expected sca, add or mul)");
    if (feat->empty()) throw ConfigError("feature '" + name + "' is not part of this variant");
    for (int c : channels) {
      if (c < 0 || c >= feat->c())
        throw ConfigError("channel " + std::to_string(c) + " outside [0, " + std::to_string(feat->c()) + ")");
      const T* p = feat->plane(0, c);
      const auto [lo, hi] = std::minmax_element(p, p + feat->shape().plane());
      std::ostringstream file;
      file << name << "_c" << std::setw(4) << std::setfill('0') << c << ".png";
      save_gray(*feat, 0, c, double(*lo), double(*hi), out / file.str());
      ranges << name << '\t' << c << '\t' << double(*lo) << '\t' << double(*hi) << '\n';
    }
  }
  return 0;
}

bool is_f64(const fs::path& ckpt) { return read_checkpoint_header(ckpt).dtype == DType::f64; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heavy rain removal: data synthesis, training, evaluation and inference"};
  app.require_subcommand(1);

  // synthesize
  auto* syn = app.add_subcommand("synthesize", "write a seeded synthetic rain dataset");
  int syn_n = 0, syn_h = kDefaultSceneHeight, syn_w = kDefaultSceneWidth;
  std::uint64_t syn_seed = 0;
  std::string syn_out, syn_model = "ats";
  syn->add_option("--n", syn_n, "number of pairs")->required()->check(CLI::PositiveNumber);
  syn->add_option("--seed", syn_seed);
  syn->add_option("--out", syn_out, "output directory")->required();
  syn->add_option("--model", syn_model, "rain formation model")->check(CLI::IsMember({"ats", "rf"}));
  syn->add_option("--height", syn_h)->check(CLI::Range(16, 4096));
  syn->add_option("--width", syn_w)->check(CLI::Range(16, 4096));

  // train / ablate share the config flags
  auto* train = app.add_subcommand("train", "train a model");
  TrainFlags train_flags;
  add_train_flags(train, train_flags);
  train_flags.opts.push_back(train->add_option("--variant", train_flags.variant, "variant name")->check(
      CLI::IsMember({"full", "sca", "add", "mul", "sca+add", "sca+mul", "add+mul", "no-ca", "no-sa", "no-ca-sa"})));

  auto* ablate = app.add_subcommand("ablate", "train and evaluate every variant of an ablation grid");
  TrainFlags ablate_flags;
  std::string grid = "subnets";
  add_train_flags(ablate, ablate_flags);
  ablate->add_option("--grid", grid)->check(CLI::IsMember({"subnets", "sca_block"}));

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a paired dataset");
  std::string eval_ckpt, eval_data, eval_out;
  bool eval_identity = false;
  auto* ck = eval->add_option("--checkpoint", eval_ckpt)->check(CLI::ExistingFile);
  auto* id = eval->add_flag("--identity", eval_identity, "score the rain images themselves");
  ck->excludes(id);
  eval->add_option("--data", eval_data, "manifest or dataset directory");
  eval->add_option("--out", eval_out, "directory for metrics.tsv")->required();

  // derain
  auto* derain = app.add_subcommand("derain", "derain one image or a directory of PNGs");
  std::string dr_ckpt, dr_in, dr_out;
  bool dr_maps = false;
  derain->add_option("--checkpoint", dr_ckpt)->required()->check(CLI::ExistingFile);
  derain->add_option("--in", dr_in, "input PNG or directory")->required()->check(CLI::ExistingPath);
  derain->add_option("--out", dr_out, "output PNG, or directory when --in is one")->required();
  derain->add_flag("--maps", dr_maps, "also write blend weights and residue visualizations");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "dump normalized feature channels as grayscale PNGs");
  std::string in_ckpt, in_img, in_out;
  std::vector<std::string> in_features{"sca", "add", "mul"};
  std::vector<int> in_channels{0, 1, 2, 3, 4, 5, 6, 7};
  inspect->add_option("--checkpoint", in_ckpt)->required()->check(CLI::ExistingFile);
  inspect->add_option("--in", in_img)->required()->check(CLI::ExistingFile);
  inspect->add_option("--out", in_out)->required();
  inspect->add_option("--features", in_features, "any of sca, add, mul")->delimiter(',');
  inspect->add_option("--channels", in_channels)->delimiter(',');

  // params
  auto* params = app.add_subcommand("params", "print the parameter count of a variant");
  std::string pr_variant = "full";
  params->add_option("--variant", pr_variant)->check(
      CLI::IsMember({"full", "sca", "add", "mul", "sca+add", "sca+mul", "add+mul", "no-ca", "no-sa", "no-ca-sa"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*syn) {
      const auto ds = build_synthetic_dataset(syn_n, syn_seed, syn_out, rain_model_from_string(syn_model), syn_h, syn_w);
      std::cout << "wrote " << ds.size() << " pairs to " << syn_out << '\n';
      return 0;
    }
    if (*train) return run_train(train_flags);
    if (*ablate) return run_ablate(ablate_flags, grid);
    if (*eval) {
      if (eval_ckpt.empty() && !eval_identity) throw UsageError("evaluate needs --checkpoint or --identity");
      const PairedDataset ds = read_manifest(manifest_path(eval_data));
      const MetricReport rep = eval_identity ? evaluate_identity(ds) : evaluate_checkpoint(eval_ckpt, ds);
      fs::create_directories(eval_out);
      std::ofstream out(fs::path(eval_out) / "metrics.tsv");
      write_metric_report(rep, out);
      std::cout << "images " << rep.rows.size() << "  psnr " << rep.mean_psnr << " dB  ssim " << rep.mean_ssim;
      if (!eval_identity)
        std::cout << "  params " << rep.parameter_count << "  " << rep.seconds_per_image << " s/image";
      std::cout << '\n';
      return 0;
    }
    if (*derain)
      return is_f64(dr_ckpt) ? derain_with<double>(dr_ckpt, dr_in, dr_out, dr_maps)
                             : derain_with<float>(dr_ckpt, dr_in, dr_out, dr_maps);
    if (*inspect)
      return is_f64(in_ckpt) ? inspect_with<double>(in_ckpt, in_img, in_out, in_features, in_channels)
                             : inspect_with<float>(in_ckpt, in_img, in_out, in_features, in_channels);
    if (*params) {
      GlaHrrModel<float> model(variant_by_name(pr_variant));
      std::cout << model.parameter_count() << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
