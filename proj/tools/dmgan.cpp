// Command-line surface: dataset export, training, evaluation, the ablation
// ladder, and memory inspection.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "dmgan/config.hpp"
#include "dmgan/dataset.hpp"
#include "dmgan/extractor.hpp"
#include "dmgan/model.hpp"
#include "dmgan/png.hpp"
#include "dmgan/train.hpp"

namespace {

int cmd_gen_data(std::uint64_t seed, std::size_t count, std::size_t res,
                 const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream captions(out_dir + "/captions.txt");
  if (!captions) {
    std::cerr << "gen-data: cannot write to " << out_dir << "\n";
    return 1;
  }
  char name[64];
  for (std::size_t i = 0; i < count; ++i) {
    dmgan::ShapeSpec spec = dmgan::make_shape_spec(seed, i);
    std::snprintf(name, sizeof name, "/sample_%06zu.png", i);
    dmgan::write_image_grid(out_dir + name, {dmgan::render_shape(spec, res)},
                            res, 1);
    captions << i << '\t' << spec.caption() << '\t' << spec.class_id() << '\n';
  }
  dmgan::make_shapes_vocabulary().save(out_dir + "/vocab.txt");
  std::cout << "wrote " << count << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  dmgan::TrainConfig cfg = dmgan::load_config(config_path);
  std::filesystem::create_directories(out_dir);
  dmgan::Trainer trainer(cfg);
  trainer.vocab().save(out_dir + "/vocab.txt");
  trainer.run(out_dir);
  std::cout << "trained " << trainer.global_step() << " steps; checkpoint at "
            << out_dir << "/checkpoint.dmgk\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, std::size_t n,
             const std::string& report_path, const std::string& extractor_path,
             std::uint64_t seed, const std::string& grid_path) {
  dmgan::Vocabulary vocab = dmgan::make_shapes_vocabulary();
  auto entries = dmgan::load_checkpoint(ckpt_path);
  auto model = dmgan::model_from_checkpoint(entries, vocab.size());
  dmgan::Extractor<float> extractor =
      dmgan::load_or_train_extractor(extractor_path);
  std::vector<std::vector<float>> samples;
  dmgan::EvalReport report =
      dmgan::evaluate_model(*model, vocab, extractor, n, seed, &samples);
  std::ofstream out(report_path);
  if (!out) {
    std::cerr << "eval: cannot write " << report_path << "\n";
    return 1;
  }
  out << report.to_json().dump(2) << "\n";
  if (!grid_path.empty() && !samples.empty())
    dmgan::write_image_grid(grid_path, samples,
                            model->stage_resolution(model->config().stages - 1),
                            8);
  std::printf("IS %.2f ± %.2f  FID %.3f  R-precision %.3f ± %.3f\n",
              report.is_mean, report.is_std, report.fid_value, report.rp_mean,
              report.rp_std);
  return 0;
}

int cmd_ablate(const std::string& config_path, std::size_t n_seeds,
               const std::string& extractor_path, std::size_t eval_n,
               const std::string& out_path) {
  dmgan::TrainConfig base = dmgan::load_config(config_path);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(base.seed + i);
  dmgan::Extractor<float> extractor =
      dmgan::load_or_train_extractor(extractor_path);
  auto rows = dmgan::ablation_run(base, seeds, extractor, eval_n);
  std::string table = dmgan::ablation_table(rows);
  std::cout << table;
  if (!out_path.empty()) {
    dmgan::json j = dmgan::json::array();
    for (const auto& r : rows)
      j.push_back({{"variant", r.label},
                   {"median_fid", r.median_fid},
                   {"fid_per_seed", r.fid_per_seed},
                   {"random_fid_per_seed", r.random_fid_per_seed}});
    std::ofstream out(out_path);
    out << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& caption,
                std::uint64_t seed, const std::string& out_dir) {
  dmgan::Vocabulary vocab = dmgan::make_shapes_vocabulary();
  auto entries = dmgan::load_checkpoint(ckpt_path);
  auto model = dmgan::model_from_checkpoint(entries, vocab.size());
  std::vector<std::vector<float>> images;
  std::vector<std::size_t> res;
  dmgan::json report =
      dmgan::inspect_memory(*model, vocab, caption, seed, &images, &res);
  std::cout << report.dump(2) << "\n";
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    for (std::size_t s = 0; s < images.size(); ++s)
      dmgan::write_image_grid(
          out_dir + "/stage" + std::to_string(s) + ".png", {images[s]}, res[s],
          1);
    std::ofstream out(out_dir + "/inspect.json");
    out << report.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-image synthesis with dynamic memory refinement"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::size_t count = 4800, res = 64, n = 2000, n_seeds = 3, eval_n = 400;
  std::string out_dir = "out", config_path, ckpt_path, report_path =
      "report.json";
  std::string extractor_path = "extractor_cache/extractor.dmgk";
  std::string caption, grid_path, ablate_out = "ablation.json";

  auto* gen = app.add_subcommand("gen-data", "export a synthetic dataset");
  gen->add_option("--seed", seed, "dataset seed");
  gen->add_option("--count", count, "number of samples");
  gen->add_option("--res", res, "image resolution");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "key=value config file")
      ->required();
  train->add_option("--out", out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--n", n, "number of generated samples");
  eval->add_option("--report", report_path, "metric report JSON path")
      ->required();
  eval->add_option("--extractor", extractor_path, "extractor cache path");
  eval->add_option("--seed", seed, "evaluation seed");
  eval->add_option("--grid", grid_path, "sample grid PNG path");

  auto* ablate = app.add_subcommand("ablate", "run the ablation ladder");
  ablate->add_option("--config", config_path, "base config file")->required();
  ablate->add_option("--seeds", n_seeds, "number of seeds per variant");
  ablate->add_option("--extractor", extractor_path, "extractor cache path");
  ablate->add_option("--eval-n", eval_n, "samples per FID evaluation");
  ablate->add_option("--out", ablate_out, "result JSON path");

  auto* inspect = app.add_subcommand("inspect", "dump memory word rankings");
  inspect->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  inspect->add_option("--caption", caption, "caption to condition on")
      ->required();
  inspect->add_option("--seed", seed, "generation seed");
  inspect->add_option("--out", out_dir, "directory for stage images");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(seed, count, res, out_dir);
    if (train->parsed()) return cmd_train(config_path, out_dir);
    if (eval->parsed())
      return cmd_eval(ckpt_path, n, report_path, extractor_path, seed,
                      grid_path);
    if (ablate->parsed())
      return cmd_ablate(config_path, n_seeds, extractor_path, eval_n,
                        ablate_out);
    if (inspect->parsed()) return cmd_inspect(ckpt_path, caption, seed, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
