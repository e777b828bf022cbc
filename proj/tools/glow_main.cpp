// Command-line entry points for the flow library: train, eval, sample,
// encode, decode, interp, manipulate, verify.
//
// Exit codes: 0 success, 2 argument error, 3 data error, 4 numerics error,
// 5 verification failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "glowflow/checkpoint.hpp"
#include "glowflow/data.hpp"
#include "glowflow/image.hpp"
#include "glowflow/latentops.hpp"
#include "glowflow/objective.hpp"
#include "glowflow/train.hpp"
#include "glowflow/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitArg = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerics = 4;
constexpr int kExitVerify = 5;

struct CliConfig {
  glow::GlowConfig model;
  glow::TrainConfig train;
  std::string train_source;
  std::string valid_source;
};

CliConfig load_cli_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw glow::DataError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw glow::ArgError("config parse error in " + path + ": " + e.what());
  }
  CliConfig cfg;
  if (!j.contains("model")) throw glow::ArgError("config needs a 'model' section");
  cfg.model = glow::config_from_json(j.at("model"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    if (t.contains("batch_size")) cfg.train.batch_size = t.at("batch_size");
    if (t.contains("total_steps")) cfg.train.total_steps = t.at("total_steps");
    if (t.contains("seed")) cfg.train.seed = t.at("seed");
    if (t.contains("eval_every")) cfg.train.eval_every = t.at("eval_every");
    if (t.contains("checkpoint_every")) {
      cfg.train.checkpoint_every = t.at("checkpoint_every");
    }
    if (t.contains("warmup_steps")) cfg.train.warmup_steps = t.at("warmup_steps");
    if (t.contains("lr")) cfg.train.lr = t.at("lr");
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    if (d.contains("train")) cfg.train_source = d.at("train");
    if (d.contains("valid")) cfg.valid_source = d.at("valid");
  }
  return cfg;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw glow::ArgError("cannot parse number '" + part + "'");
    }
  }
  if (out.empty()) throw glow::ArgError("empty number list");
  return out;
}

json metrics_json(const glow::MetricsRow& r) {
  return {{"step", r.step},
          {"nats", r.nats},
          {"bpd", r.bpd},
          {"wallclock_ms", r.wallclock_ms}};
}

// Loads one image as a dequantized model-space tensor.
glow::Tensor4<float> load_image_tensor(const std::string& path,
                                       const glow::GlowConfig& cfg,
                                       std::uint64_t seed) {
  const glow::Image8 img = glow::read_png(path);
  if (img.h != cfg.input.h || img.w != cfg.input.w || img.c != cfg.input.c) {
    throw glow::ShapeError("image " + path + " does not match model input " +
                           std::to_string(cfg.input.h) + "x" +
                           std::to_string(cfg.input.w) + "x" +
                           std::to_string(cfg.input.c));
  }
  glow::IntBatch b;
  b.n = 1;
  b.h = img.h;
  b.w = img.w;
  b.c = img.c;
  b.pixels.resize(img.pixels.size());
  const int shift = 8 - cfg.n_bits;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    b.pixels[i] = static_cast<std::uint8_t>(img.pixels[i] >> shift);
  }
  glow::Rng noise(glow::derive_seed(seed, glow::seed_stream::dequant_noise));
  return glow::dequantize<float>(b, cfg.n_bits, noise);
}

void write_outputs(const glow::Tensor4<float>& x, const std::string& out_dir,
                   const std::string& stem, int grid_cols, int gap) {
  fs::create_directories(out_dir);
  if (x.c() == 1 || x.c() == 3) {
    std::vector<glow::Image8> tiles;
    for (int i = 0; i < x.n(); ++i) {
      tiles.push_back(glow::to_image8(x, i));
      glow::write_png(out_dir + "/" + stem + "_" + std::to_string(i) + ".png",
                      tiles.back());
    }
    glow::write_png(out_dir + "/" + stem + "_grid.png",
                    glow::make_grid(tiles, grid_cols, gap));
  } else {
    // Non-image channel counts (toy 2-D data) go out as a GTB tensor.
    glow::write_gtb_file(out_dir + "/" + stem + ".gtb", glow::make_blob(x));
  }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_single_training(const CliConfig& cli, const std::string& out_dir,
                        const std::string& metrics_name) {
  const glow::Dataset train =
      glow::Dataset::load(cli.train_source, cli.model.n_bits);
  glow::Dataset valid;
  const bool has_valid = !cli.valid_source.empty();
  if (has_valid) {
    valid = glow::Dataset::load(cli.valid_source, cli.model.n_bits);
  }

  fs::create_directories(out_dir);
  std::ofstream metrics(out_dir + "/" + metrics_name);
  std::ofstream metrics_valid;
  if (has_valid) {
    metrics_valid.open(out_dir + "/valid_" + metrics_name);
  }

  glow::FlowModel<float> model =
      glow::FlowModel<float>::build(cli.model, cli.train.seed);

  const std::string ckpt_stem =
      metrics_name.substr(0, metrics_name.find(".jsonl"));
  const auto sink = [&](const glow::MetricsRow& r) {
    (r.eval ? metrics_valid : metrics) << metrics_json(r).dump() << "\n";
  };
  const auto ckpt_hook = [&](std::int64_t step) {
    const std::string path =
        out_dir + "/ckpt_" + ckpt_stem + "_step" + std::to_string(step) + ".glow";
    glow::save_checkpoint(path, model, cli.train.seed, step);
    return path;
  };

  const glow::TrainResult res = glow::train_loop(
      model, train, has_valid ? &valid : nullptr, cli.train, sink, ckpt_hook);

  glow::save_checkpoint(out_dir + "/ckpt_" + ckpt_stem + "_final.glow", model,
                        cli.train.seed, res.steps);
  std::cout << "trained " << res.steps << " steps, final nats "
            << res.final_nats << " (" << res.final_bpd << " bits/dim)\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& perm_override,
              const std::string& coupling_override, int steps_override,
              std::int64_t seed_override, bool ablation) {
  CliConfig cli = load_cli_config(config_path);
  if (cli.train_source.empty()) {
    throw glow::ArgError("config data.train is required for training");
  }
  if (steps_override >= 0) cli.train.total_steps = steps_override;
  if (seed_override >= 0) {
    cli.train.seed = static_cast<std::uint64_t>(seed_override);
  }

  if (!ablation) {
    json j;  // overrides reuse the checkpoint config codec for validation
    j = glow::config_to_json(cli.model);
    if (!perm_override.empty()) j["perm"] = perm_override;
    if (!coupling_override.empty()) j["coupling"] = coupling_override;
    cli.model = glow::config_from_json(j);
    return run_single_training(cli, out_dir, "metrics.jsonl");
  }

  // Ablation grid: 3 permutation variants x 2 coupling modes, matched
  // budget, one metrics file each.
  for (const std::string perm : {"reverse", "shuffle", "invconv"}) {
    for (const std::string coupling : {"additive", "affine"}) {
      json j = glow::config_to_json(cli.model);
      j["perm"] = perm;
      j["coupling"] = coupling;
      CliConfig run = cli;
      run.model = glow::config_from_json(j);
      const std::string name = "metrics_" + perm + "_" + coupling + ".jsonl";
      std::cout << "[ablation] " << perm << " / " << coupling << "\n";
      run_single_training(run, out_dir, name);
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval / sample / encode / decode / interp / manipulate / verify
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& data_src, int batch,
             std::uint64_t seed) {
  glow::FlowModel<float> model = glow::load_checkpoint<float>(ckpt);
  const glow::Dataset ds = glow::Dataset::load(data_src, model.cfg.n_bits);
  const auto res = glow::evaluate(model, ds, batch, seed);
  json out = {{"nats", res.nats_mean}, {"bpd", res.bpd}, {"count", ds.count}};
  std::cout << out.dump() << "\n";
  return kExitOk;
}

int cmd_sample(const std::string& ckpt, int n, double temperature,
               const std::string& temps, std::uint64_t seed,
               const std::string& out_dir, int grid_cols, int gap) {
  if (temperature < 0) throw glow::ArgError("temperature must be >= 0");
  glow::FlowModel<float> model = glow::load_checkpoint<float>(ckpt);
  fs::create_directories(out_dir);
  if (temps.empty()) {
    const glow::Tensor4<float> x = model.sample(n, temperature, seed);
    write_outputs(x, out_dir, "sample", grid_cols, gap);
    return kExitOk;
  }
  for (const double t : parse_double_list(temps)) {
    if (t < 0) throw glow::ArgError("temperature must be >= 0");
    const glow::Tensor4<float> x = model.sample(n, t, seed);
    std::ostringstream stem;
    stem << "temp_" << t;
    write_outputs(x, out_dir, stem.str(), n, gap);
  }
  return kExitOk;
}

int cmd_encode(const std::string& ckpt, const std::string& input,
               const std::string& out_path, std::uint64_t seed) {
  glow::FlowModel<float> model = glow::load_checkpoint<float>(ckpt);
  glow::Tensor4<float> x;
  if (fs::is_regular_file(input) && input.size() > 4 &&
      input.substr(input.size() - 4) == ".png") {
    x = load_image_tensor(input, model.cfg, seed);
  } else {
    const glow::Dataset ds = glow::Dataset::load(input, model.cfg.n_bits);
    if (ds.h != model.cfg.input.h || ds.w != model.cfg.input.w ||
        ds.c != model.cfg.input.c) {
      throw glow::ShapeError("dataset shape does not match model input");
    }
    glow::Rng noise(
        glow::derive_seed(seed, glow::seed_stream::dequant_noise));
    x = glow::dequantize<float>(ds.slice(0, ds.count), model.cfg.n_bits,
                                noise);
  }
  const auto enc = model.encode(x);
  glow::save_latents(out_path, enc.lat);
  double mean_ld = 0;
  for (const float v : enc.logdet) mean_ld += v;
  mean_ld /= static_cast<double>(enc.logdet.size());
  json out = {{"samples", x.n()},
              {"parts", enc.lat.parts.size()},
              {"mean_logdet", mean_ld},
              {"out", out_path}};
  std::cout << out.dump() << "\n";
  return kExitOk;
}

int cmd_decode(const std::string& ckpt, const std::string& latents,
               const std::string& out_dir, int grid_cols, int gap) {
  glow::FlowModel<float> model = glow::load_checkpoint<float>(ckpt);
  const glow::LatentRecord<float> lat = glow::load_latents<float>(latents);
  const glow::Tensor4<float> x = model.decode(lat);
  write_outputs(x, out_dir, "decoded", grid_cols, gap);
  return kExitOk;
}

int cmd_interp(const std::string& ckpt, const std::string& a,
               const std::string& b, int steps, std::uint64_t seed,
               const std::string& out_path, int gap) {
  glow::FlowModel<float> model = glow::load_checkpoint<float>(ckpt);
  const glow::Tensor4<float> xa = load_image_tensor(a, model.cfg, seed);
  const glow::Tensor4<float> xb = load_image_tensor(b, model.cfg, seed + 1);
  const auto seq = glow::interpolate(model, xa, xb, steps);
  std::vector<glow::Image8> tiles;
  for (const auto& img : seq) tiles.push_back(glow::to_image8(img, 0));
  glow::write_png(out_path, glow::make_grid(tiles, steps, gap));
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_manipulate(const std::string& ckpt, const std::string& image,
                   const std::string& data_dir, const std::string& labels_csv,
                   const std::string& alphas_str, const std::string& attr,
                   std::uint64_t seed, const std::string& out_path, int gap) {
  glow::FlowModel<float> model = glow::load_checkpoint<float>(ckpt);
  const glow::Dataset ds = glow::Dataset::load(data_dir, model.cfg.n_bits);
  if (ds.names.empty()) {
    throw glow::DataError("manipulation needs a PNG directory dataset with filenames");
  }
  const auto label_map = glow::load_labels(labels_csv);
  std::vector<int> labels(ds.count);
  for (std::size_t i = 0; i < ds.count; ++i) {
    const auto it = label_map.find(ds.names[i]);
    if (it == label_map.end()) {
      throw glow::DataError("no label for dataset item " + ds.names[i]);
    }
    labels[i] = it->second;
  }
  const auto dir = glow::attribute_direction(model, ds, labels, seed, attr);
  const glow::Tensor4<float> x = load_image_tensor(image, model.cfg, seed);
  const std::vector<double> alphas = parse_double_list(alphas_str);
  const auto seq = glow::manipulate(model, x, dir.direction, alphas);
  std::vector<glow::Image8> tiles;
  for (const auto& img : seq) tiles.push_back(glow::to_image8(img, 0));
  glow::write_png(out_path,
                  glow::make_grid(tiles, static_cast<int>(tiles.size()), gap));
  std::cout << "wrote " << out_path << " (" << dir.positive_count << " pos / "
            << dir.negative_count << " neg)\n";
  return kExitOk;
}

int cmd_verify(const std::string& ckpt, const std::string& config_path,
               bool f32, std::uint64_t seed, const std::string& report_path) {
  std::vector<glow::verify::CheckResult> results;
  if (!ckpt.empty()) {
    if (f32) {
      glow::FlowModel<float> model = glow::load_checkpoint<float>(ckpt);
      results = glow::verify::run_suite(model, seed);
    } else {
      glow::FlowModel<double> model = glow::load_checkpoint<double>(ckpt);
      results = glow::verify::run_suite(model, seed);
    }
  } else {
    glow::GlowConfig cfg;
    if (!config_path.empty()) {
      cfg = load_cli_config(config_path).model;
    } else {
      // Default desk-scale configuration.
      cfg.K = 2;
      cfg.L = 2;
      cfg.coupling = glow::CouplingMode::affine;
      cfg.perm = glow::PermVariant::invconv;
      cfg.invconv_param = glow::InvConvParam::dense;
      cfg.hidden_channels = 16;
      cfg.input = {8, 8, 2};
      cfg.n_bits = 8;
    }
    if (f32) {
      auto model = glow::FlowModel<float>::build(cfg, seed);
      glow::verify::randomize_model(model, seed + 1);
      results = glow::verify::run_suite(model, seed);
    } else {
      auto model = glow::FlowModel<double>::build(cfg, seed);
      glow::verify::randomize_model(model, seed + 1);
      results = glow::verify::run_suite(model, seed);
    }
  }

  const json report = glow::verify::to_json(results);
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    if (!f) throw glow::DataError("cannot write report: " + report_path);
    f << report.dump(2) << "\n";
  }
  std::cout << report.dump(2) << "\n";
  return glow::verify::all_pass(results) ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Glow normalizing-flow trainer and sampler"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model from a config file");
  std::string train_config, train_out = "runs";
  std::string perm_override, coupling_override;
  int steps_override = -1;
  std::int64_t seed_override = -1;
  bool ablation = false;
  train->add_option("--config", train_config, "JSON config file")->required();
  train->add_option("--out", train_out, "Output directory");
  train->add_option("--perm", perm_override,
                    "Override permutation variant (reverse|shuffle|invconv)");
  train->add_option("--coupling", coupling_override,
                    "Override coupling mode (additive|affine)");
  train->add_option("--steps", steps_override, "Override total steps");
  train->add_option("--seed", seed_override, "Override training seed");
  train->add_flag("--ablation", ablation,
                  "Run the 3x2 permutation/coupling grid");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate bits/dim on a dataset");
  std::string eval_ckpt, eval_data;
  int eval_batch = 64;
  std::uint64_t eval_seed = 0;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval->add_option("--data", eval_data, "Dataset source")->required();
  eval->add_option("--batch", eval_batch, "Evaluation batch size");
  eval->add_option("--seed", eval_seed, "Dequantization seed");

  // sample
  auto* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  std::string sample_ckpt, sample_out = "samples", sample_temps;
  int sample_n = 16, grid_cols = 4, gap = 2;
  double temperature = 0.7;  // reduced-temperature default
  std::uint64_t sample_seed = 0;
  sample->add_option("--ckpt", sample_ckpt, "Checkpoint")->required();
  sample->add_option("--n", sample_n, "Number of samples");
  sample->add_option("--temp", temperature, "Sampling temperature");
  sample->add_option("--temps", sample_temps,
                     "Comma-separated temperature sweep (one strip each)");
  sample->add_option("--seed", sample_seed, "Sampling seed");
  sample->add_option("--out", sample_out, "Output directory");
  sample->add_option("--grid-cols", grid_cols, "Grid columns");
  sample->add_option("--gap", gap, "Tile gap in pixels");

  // encode / decode
  auto* encode = app.add_subcommand("encode", "Encode images to latents");
  std::string enc_ckpt, enc_in, enc_out = "latents.glowlat";
  std::uint64_t enc_seed = 0;
  encode->add_option("--ckpt", enc_ckpt, "Checkpoint")->required();
  encode->add_option("--in", enc_in, "PNG file or dataset source")->required();
  encode->add_option("--out", enc_out, "Latent file");
  encode->add_option("--seed", enc_seed, "Dequantization seed");

  auto* decode = app.add_subcommand("decode", "Decode latents to images");
  std::string dec_ckpt, dec_in, dec_out = "decoded";
  decode->add_option("--ckpt", dec_ckpt, "Checkpoint")->required();
  decode->add_option("--in", dec_in, "Latent file")->required();
  decode->add_option("--out", dec_out, "Output directory");
  decode->add_option("--grid-cols", grid_cols, "Grid columns");
  decode->add_option("--gap", gap, "Tile gap in pixels");

  // interp
  auto* interp = app.add_subcommand("interp",
                                    "Latent interpolation between two images");
  std::string int_ckpt, int_a, int_b, int_out = "interp.png";
  int int_steps = 8;
  std::uint64_t int_seed = 0;
  interp->add_option("--ckpt", int_ckpt, "Checkpoint")->required();
  interp->add_option("--a", int_a, "First image (PNG)")->required();
  interp->add_option("--b", int_b, "Second image (PNG)")->required();
  interp->add_option("--steps", int_steps, "Interpolation steps");
  interp->add_option("--seed", int_seed, "Dequantization seed");
  interp->add_option("--out", int_out, "Output strip PNG");
  interp->add_option("--gap", gap, "Tile gap in pixels");

  // manipulate
  auto* manip = app.add_subcommand(
      "manipulate", "Attribute-direction manipulation of an image");
  std::string man_ckpt, man_image, man_data, man_labels, man_attr = "attr";
  std::string man_alphas = "-2,-1,0,1,2", man_out = "manipulate.png";
  std::uint64_t man_seed = 0;
  manip->add_option("--ckpt", man_ckpt, "Checkpoint")->required();
  manip->add_option("--image", man_image, "Image to manipulate (PNG)")
      ->required();
  manip->add_option("--data", man_data, "Labeled PNG dataset directory")
      ->required();
  manip->add_option("--labels", man_labels, "CSV of filename,0|1")->required();
  manip->add_option("--alphas", man_alphas, "Comma-separated step scales");
  manip->add_option("--attr", man_attr, "Attribute name");
  manip->add_option("--seed", man_seed, "Dequantization seed");
  manip->add_option("--out", man_out, "Output strip PNG");
  manip->add_option("--gap", gap, "Tile gap in pixels");

  // verify
  auto* verify = app.add_subcommand(
      "verify", "Run the numerical certification suite");
  std::string ver_ckpt, ver_config, ver_report;
  bool ver_f32 = false;
  std::uint64_t ver_seed = 1;
  verify->add_option("--ckpt", ver_ckpt, "Checkpoint to verify");
  verify->add_option("--config", ver_config, "Config for a fresh model");
  verify->add_flag("--f32", ver_f32, "Verify in f32 (round-trip tolerance 1e-4)");
  verify->add_option("--seed", ver_seed, "Suite seed");
  verify->add_option("--report", ver_report, "Write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitArg;
  }

  try {
    if (train->parsed()) {
      return cmd_train(train_config, train_out, perm_override,
                       coupling_override, steps_override, seed_override,
                       ablation);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_ckpt, eval_data, eval_batch, eval_seed);
    }
    if (sample->parsed()) {
      return cmd_sample(sample_ckpt, sample_n, temperature, sample_temps,
                        sample_seed, sample_out, grid_cols, gap);
    }
    if (encode->parsed()) {
      return cmd_encode(enc_ckpt, enc_in, enc_out, enc_seed);
    }
    if (decode->parsed()) {
      return cmd_decode(dec_ckpt, dec_in, dec_out, grid_cols, gap);
    }
    if (interp->parsed()) {
      return cmd_interp(int_ckpt, int_a, int_b, int_steps, int_seed, int_out,
                        gap);
    }
    if (manip->parsed()) {
      return cmd_manipulate(man_ckpt, man_image, man_data, man_labels,
                            man_alphas, man_attr, man_seed, man_out, gap);
    }
    if (verify->parsed()) {
      return cmd_verify(ver_ckpt, ver_config, ver_f32, ver_seed, ver_report);
    }
  } catch (const glow::ArgError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kExitArg;
  } catch (const glow::ShapeError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kExitArg;
  } catch (const glow::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const glow::Error& e) {
    // NumericsError, SingularError, StateError, CostGuardError
    std::cerr << "numerics error: " << e.what() << "\n";
    return kExitNumerics;
  }
  return kExitArg;
}
