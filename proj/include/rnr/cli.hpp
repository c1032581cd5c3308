#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rnr/checkpoint.hpp"
#include "rnr/data.hpp"
#include "rnr/gradsuite.hpp"
#include "rnr/metrics.hpp"
#include "rnr/planner.hpp"
#include "rnr/train.hpp"

namespace rnr {

constexpr int kRunFormatVersion = 1;

// gt-only pixels green, prediction-only red, intersection yellow,
// alpha-blended 0.5 over the input.
inline RgbImage render_overlay(const RgbImage& image, const GrayImage& pred, const GrayImage& gt,
                               double threshold = 0.5) {
  if (pred.h != image.h || pred.w != image.w || gt.h != image.h || gt.w != image.w)
    throw ShapeError("render_overlay: image " + std::to_string(image.h) + "x" +
                     std::to_string(image.w) + " vs masks " + std::to_string(pred.h) + "x" +
                     std::to_string(pred.w) + " / " + std::to_string(gt.h) + "x" +
                     std::to_string(gt.w));
  RgbImage out = image;
  for (int v = 0; v < image.h; ++v)
    for (int u = 0; u < image.w; ++u) {
      const bool p = pred.at(v, u) / 255.0 >= threshold;
      const bool g = gt.at(v, u) != 0;
      if (!p && !g) continue;
      const std::uint8_t tint[3] = {static_cast<std::uint8_t>(p ? 255 : 0),
                                    static_cast<std::uint8_t>(g ? 255 : 0), 0};
      std::uint8_t* px = out.at(v, u);
      for (int c = 0; c < 3; ++c)
        px[c] = static_cast<std::uint8_t>(std::lround(0.5 * px[c] + 0.5 * tint[c]));
    }
  return out;
}

namespace cli_detail {

// Echo the effective options and the format-version stamp before any work.
inline void write_run_stamp(const std::string& out_dir, const std::string& subcommand,
                            const std::vector<std::pair<std::string, std::string>>& options) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create run directory " + out_dir + ": " + ec.message());
  std::ofstream f(fs::path(out_dir) / "run_config.txt", std::ios::binary);
  if (!f) throw IoError("cannot write run config in " + out_dir);
  f << "format_version = " << kRunFormatVersion << "\n";
  f << "subcommand = " << subcommand << "\n";
  for (const auto& [k, v] : options) f << k << " = " << v << "\n";
}

inline TrainConfig effective_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
  TrainConfig cfg = config_path.empty() ? TrainConfig::desk() : TrainConfig::load(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + kv + "' is not of the form key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

inline GrayImage prob_to_pgm(const Tensor<float>& prob) {
  GrayImage g{prob.extent(0), prob.extent(1),
              std::vector<std::uint8_t>(prob.size())};
  for (std::size_t i = 0; i < prob.size(); ++i)
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * prob.data()[i]));
  return g;
}

inline Tensor<float> pgm_to_prob(const GrayImage& g) {
  Tensor<float> t({g.h, g.w});
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = g.pixels[i] / 255.0f;
  return t;
}

struct EvalOutput {
  EvalReport report;
  double center_pgm = 0.0;
};

inline EvalOutput evaluate_checkpoint(const GroundingModel<float>& model, const DataSet& ds,
                                      const std::string& stratify, const std::vector<int>& ks,
                                      int threads) {
  std::vector<EvalItem> items(ds.samples.size());
  parallel_for(static_cast<int>(ds.samples.size()), threads, [&](int i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    auto pred = model.predict(s.image, s.token_ids);
    items[static_cast<std::size_t>(i)] =
        EvalItem{pred.probabilities, s.gt, s.action, s.word_count};
  });
  EvalOutput out;
  out.report = stratified_report(items, stratify, ks);
  std::vector<GrayImage> gts;
  for (const auto& s : ds.samples) gts.push_back(s.gt);
  out.center_pgm = center_baseline(gts);
  return out;
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"referring navigable regions: synthetic data, training, evaluation, planning"};
  app.require_subcommand(1);

  // gen-data ----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset split");
  int gen_n = 1;
  std::uint64_t gen_seed = 42;
  std::string gen_split = "train", gen_out = "data";
  bool gen_verbose = false;
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--seed", gen_seed, "global seed");
  gen->add_option("--split", gen_split, "split name")->check(CLI::IsMember({"train", "val", "test"}));
  gen->add_option("--out", gen_out, "output dataset directory");
  gen->add_flag("--verbose-commands", gen_verbose, "pad commands with distractor clauses");

  // train -------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_out = "runs/train", tr_data, tr_model;
  std::vector<std::string> tr_sets;
  std::uint64_t tr_seed = 0;
  bool tr_seed_set = false, tr_model_set = false;
  tr->add_option("--config", tr_config, "config file (key = value lines)");
  tr->add_option("--set", tr_sets, "config override key=value")->take_all();
  tr->add_option("--model", tr_model, "model kind: baseline|tbm")
      ->check(CLI::IsMember({"baseline", "tbm"}))
      ->each([&](const std::string&) { tr_model_set = true; });
  tr->add_option("--seed", tr_seed, "seed override")->each([&](const std::string&) { tr_seed_set = true; });
  tr->add_option("--data", tr_data, "dataset directory override");
  tr->add_option("--out", tr_out, "run output directory");

  // eval --------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_config, ev_data, ev_split = "val", ev_stratify = "none",
              ev_out = "runs/eval";
  std::vector<int> ev_ks = default_recall_ks();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--config", ev_config, "config file to verify the checkpoint fingerprint");
  ev->add_option("--data", ev_data, "dataset directory override");
  ev->add_option("--split", ev_split, "dataset split")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--stratify", ev_stratify, "stratified breakdown")
      ->check(CLI::IsMember({"none", "length", "action"}));
  ev->add_option("--k", ev_ks, "recall@k values")->take_all();
  ev->add_option("--out", ev_out, "run output directory");

  // infer -------------------------------------------------------------------
  auto* in = app.add_subcommand("infer", "predict a mask for one image and command");
  std::string in_ckpt, in_image, in_command, in_out = "runs/infer", in_data;
  in->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
  in->add_option("--image", in_image, "input image (binary PPM)")->required();
  in->add_option("--command", in_command, "natural-language command")->required();
  in->add_option("--data", in_data, "dataset directory (for vocab.txt)");
  in->add_option("--out", in_out, "run output directory");

  // plan --------------------------------------------------------------------
  auto* pl = app.add_subcommand("plan", "plan a trajectory to the grounded region");
  std::string pl_mask, pl_scene, pl_out = "runs/plan";
  double pl_threshold = 0.5;
  std::uint64_t pl_seed = 42;
  pl->add_option("--mask", pl_mask, "mask file (binary PGM, probabilities)")->required();
  pl->add_option("--scene", pl_scene, "scene file (JSON)")->required();
  pl->add_option("--threshold", pl_threshold, "mask threshold");
  pl->add_option("--seed", pl_seed, "planner seed");
  pl->add_option("--out", pl_out, "run output directory");

  // render ------------------------------------------------------------------
  auto* re = app.add_subcommand("render", "overlay prediction and ground truth on an image");
  std::string re_image, re_mask, re_gt, re_out = "runs/render";
  double re_threshold = 0.5;
  re->add_option("--image", re_image, "input image (binary PPM)")->required();
  re->add_option("--mask", re_mask, "predicted mask (binary PGM)")->required();
  re->add_option("--gt", re_gt, "ground-truth mask (binary PGM)");
  re->add_option("--threshold", re_threshold, "prediction threshold");
  re->add_option("--out", re_out, "run output directory");

  // gradcheck ---------------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "run the gradient verification suite");
  double gc_tol = 1e-4;
  gc->add_option("--tol", gc_tol, "max relative error tolerance");

  std::reverse(args.begin(), args.end());  // CLI11 consumes right to left
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  namespace fs = std::filesystem;
  try {
    if (gen->parsed()) {
      cli_detail::write_run_stamp(gen_out, "gen-data",
                                  {{"n", std::to_string(gen_n)},
                                   {"seed", std::to_string(gen_seed)},
                                   {"split", gen_split},
                                   {"verbose_commands", gen_verbose ? "true" : "false"}});
      GenOptions opt;
      opt.verbose = gen_verbose;
      auto entries = generate_dataset(gen_n, gen_seed, gen_split, gen_out, opt);
      std::cout << "wrote " << entries.size() << " samples to " << gen_out << "/" << gen_split
                << "\n";
      return 0;
    }

    if (tr->parsed()) {
      TrainConfig cfg = cli_detail::effective_config(tr_config, tr_sets);
      if (tr_model_set) cfg.model = tr_model;
      if (tr_seed_set) cfg.seed = tr_seed;
      if (!tr_data.empty()) cfg.data_dir = tr_data;
      cfg.validate();
      cli_detail::write_run_stamp(tr_out, "train", {});
      {
        std::ofstream f(fs::path(tr_out) / "config.txt", std::ios::binary);
        f << cfg.canonical_text();
      }
      DataSet train_set = load_dataset(cfg.data_dir, "train", cfg.max_tokens);
      DataSet val_set = load_dataset(cfg.data_dir, "val", cfg.max_tokens);
      auto model = make_model<float>(cfg, train_set.vocab.size());
      std::ofstream log(fs::path(tr_out) / "train_log.txt", std::ios::binary);
      TrainResult result = train(model, train_set.samples, val_set.samples, &log);
      write_loss_trace((fs::path(tr_out) / "loss_trace.csv").string(), result.loss_trace);
      save_checkpoint(model.params, cfg, (fs::path(tr_out) / "ckpt_final.rnr").string());
      save_checkpoint(result.best_params, cfg, (fs::path(tr_out) / "ckpt_best.rnr").string());
      std::cout << "best val PGM " << result.best_val_pgm << " at epoch " << result.best_epoch
                << "; checkpoints in " << tr_out << "\n";
      return 0;
    }

    if (ev->parsed()) {
      TrainConfig expected;
      const bool verify = !ev_config.empty();
      if (verify) expected = TrainConfig::load(ev_config);
      auto model = load_model_checkpoint(ev_ckpt, verify ? &expected : nullptr);
      const std::string data_dir = ev_data.empty() ? model.cfg.data_dir : ev_data;
      cli_detail::write_run_stamp(ev_out, "eval",
                                  {{"ckpt", ev_ckpt},
                                   {"data", data_dir},
                                   {"split", ev_split},
                                   {"stratify", ev_stratify}});
      DataSet ds = load_dataset(data_dir, ev_split, model.cfg.max_tokens);
      auto out = cli_detail::evaluate_checkpoint(model, ds, ev_stratify, ev_ks, default_threads());
      {
        std::ofstream f(fs::path(ev_out) / "report.json", std::ios::binary);
        f << out.report.to_text();
      }
      std::cout << "split " << ev_split << " n " << out.report.n << " pgm " << out.report.pgm
                << " overall_iou " << out.report.overall_iou << " center_baseline_pgm "
                << out.center_pgm << "\n";
      return 0;
    }

    if (in->parsed()) {
      auto model = load_model_checkpoint(in_ckpt);
      const std::string data_dir = in_data.empty() ? model.cfg.data_dir : in_data;
      cli_detail::write_run_stamp(in_out, "infer",
                                  {{"ckpt", in_ckpt}, {"image", in_image}, {"command", in_command}});
      Vocabulary vocab = load_vocab((fs::path(data_dir) / "vocab.txt").string());
      Tensor<float> image = image_to_tensor(read_ppm(in_image));
      auto tk = tokenize(in_command, vocab, model.cfg.max_tokens);
      if (tk.ids.empty()) throw ContractError("infer: command has no tokens");
      auto pred = model.predict(image, tk.ids);
      write_pgm((fs::path(in_out) / "pred_mask.pgm").string(),
                cli_detail::prob_to_pgm(pred.probabilities));
      std::cout << "wrote " << (fs::path(in_out) / "pred_mask.pgm").string() << "\n";
      return 0;
    }

    if (pl->parsed()) {
      cli_detail::write_run_stamp(pl_out, "plan",
                                  {{"mask", pl_mask},
                                   {"scene", pl_scene},
                                   {"threshold", std::to_string(pl_threshold)},
                                   {"seed", std::to_string(pl_seed)}});
      SceneFile scene = load_scene_file(pl_scene);
      Tensor<float> prob = cli_detail::pgm_to_prob(read_pgm(pl_mask));
      const WorldPoint goal = mask_to_goal(prob, scene.camera, pl_threshold);
      GroundScene ground;
      ground.obstacles = scene.obstacles;
      PlannerParams pp;
      Trajectory traj = rrt_plan(ground, {0.0, 0.0}, goal, pp, pl_seed);
      write_trajectory_csv((fs::path(pl_out) / "trajectory.csv").string(), traj);
      std::cout << "goal (" << goal[0] << ", " << goal[1] << ") reached in "
                << traj.waypoints.size() << " waypoints\n";
      return 0;
    }

    if (re->parsed()) {
      cli_detail::write_run_stamp(re_out, "render",
                                  {{"image", re_image},
                                   {"mask", re_mask},
                                   {"gt", re_gt},
                                   {"threshold", std::to_string(re_threshold)}});
      RgbImage image = read_ppm(re_image);
      GrayImage pred = read_pgm(re_mask);
      GrayImage gt;
      if (re_gt.empty()) {
        gt = GrayImage{image.h, image.w,
                       std::vector<std::uint8_t>(static_cast<std::size_t>(image.h) * image.w, 0)};
      } else {
        gt = read_pgm(re_gt);
      }
      RgbImage overlay = render_overlay(image, pred, gt, re_threshold);
      write_ppm((fs::path(re_out) / "overlay.ppm").string(), overlay);
      std::cout << "wrote " << (fs::path(re_out) / "overlay.ppm").string() << "\n";
      return 0;
    }

    if (gc->parsed()) {
      GradSuiteResult res = run_gradient_suite(gc_tol);
      for (const auto& item : res.items)
        std::cout << (item.pass ? "pass " : "FAIL ") << item.name << " max_rel_err "
                  << item.max_rel_err << "\n";
      std::cout << (res.pass ? "gradient suite passed" : "gradient suite FAILED") << " ("
                << res.items.size() << " checks, worst " << res.worst << ", " << res.seconds
                << " s)\n";
      return res.pass ? 0 : 1;
    }
  } catch (const PlanningError& e) {
    std::cerr << "planning failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace rnr
