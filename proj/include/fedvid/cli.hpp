#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedvid/engine.hpp"
#include "fedvid/error.hpp"
#include "fedvid/evaluation.hpp"
#include "fedvid/replay.hpp"
#include "fedvid/run_config.hpp"

// Command line front end. Exit codes: 0 success, 2 configuration error,
// 3 infeasible partition, 4 I/O failure.

namespace fedvid {

namespace cli_detail {

inline int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::infeasible_partition: return 3;
    case ErrorKind::io: return 4;
    default: return 2;
  }
}

inline RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return default_run_config();
  return load_run_config(path);
}

struct PretrainOverrides {
  std::string strategy;
  std::optional<double> alpha;
  std::optional<int> beta;
  std::optional<int> partial;
  std::optional<int> rounds;
  std::optional<std::uint64_t> seed;
  std::string output_dir;

  void apply(RunConfig& cfg) const {
    if (!strategy.empty()) cfg.aggregation.strategy = strategy_from_string(strategy);
    if (alpha) cfg.aggregation.alpha = *alpha;
    if (beta) cfg.aggregation.beta = *beta;
    if (partial) cfg.aggregation.partial_update = (*partial != 0);
    if (rounds) cfg.rounds = *rounds;
    if (seed) {
      cfg.seeds.master = *seed;
      cfg.dataset.seed = cfg.seeds.dataset_seed();
    }
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    cfg.validate();
  }
};

inline std::vector<double> parse_level_range(const std::string& text) {
  // "start:end:step" inclusive of both ends (within half a step).
  double start = 0.0, end = 0.0, step = 0.0;
  if (std::sscanf(text.c_str(), "%lf:%lf:%lf", &start, &end, &step) != 3 || step <= 0.0) {
    throw Error(ErrorKind::config, "bad level range '" + text + "', expected start:end:step");
  }
  std::vector<double> levels;
  const int n = static_cast<int>(std::floor((end - start) / step + 0.5));
  for (int i = 0; i <= n; ++i) levels.push_back(start + i * step);
  return levels;
}

inline void parse_pair_range(const std::string& text, double& lo, double& hi) {
  if (std::sscanf(text.c_str(), "%lf:%lf", &lo, &hi) != 2 || !(lo < hi)) {
    throw Error(ErrorKind::config, "bad range '" + text + "', expected lo:hi with lo < hi");
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot open for writing: " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

inline void emit_json(const nlohmann::json& doc, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << doc.dump(1) << "\n";
  } else {
    write_text(out_path, doc.dump(1) + "\n");
  }
}

// Loads a checkpoint plus the config describing its data; defaults to the
// config.json sitting next to the checkpoint.
struct CheckpointBundle {
  WeightSet weights;
  CheckpointMeta meta;
  RunConfig config;
};

inline CheckpointBundle load_bundle(const std::string& ckpt_path, const std::string& config_path) {
  CheckpointBundle bundle;
  auto [weights, meta] = load_checkpoint(ckpt_path);
  bundle.weights = std::move(weights);
  bundle.meta = std::move(meta);
  std::string cfg_path = config_path;
  if (cfg_path.empty()) {
    cfg_path = (std::filesystem::path(ckpt_path).parent_path() / "config.json").string();
  }
  bundle.config = load_run_config(cfg_path);
  if (!bundle.meta.config_sha256.empty() &&
      bundle.meta.config_sha256 != config_digest(bundle.config)) {
    std::cerr << "warning: checkpoint config digest does not match " << cfg_path << "\n";
  }
  return bundle;
}

inline std::string svg_line_chart(const std::vector<double>& xs,
                                  const std::vector<std::vector<double>>& series,
                                  const std::vector<std::string>& names, const std::string& x_label,
                                  const std::string& y_label) {
  const int width = 640, height = 420, margin = 56;
  double x_min = xs.front(), x_max = xs.back();
  double y_min = 0.0, y_max = 0.0;
  for (const auto& s : series) {
    for (double v : s) y_max = std::max(y_max, v);
  }
  if (y_max <= y_min) y_max = y_min + 1.0;
  auto px = [&](double x) {
    return margin + (x - x_min) / (x_max - x_min) * (width - 2 * margin);
  };
  auto py = [&](double y) {
    return height - margin - (y - y_min) / (y_max - y_min) * (height - 2 * margin);
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                    "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" + std::to_string(height - margin) +
         "\" x2=\"" + std::to_string(width - margin) + "\" y2=\"" + std::to_string(height - margin) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + std::to_string(margin) + "\" y1=\"" + std::to_string(margin) + "\" x2=\"" +
         std::to_string(margin) + "\" y2=\"" + std::to_string(height - margin) +
         "\" stroke=\"black\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::string points;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      points += std::to_string(px(xs[i])) + "," + std::to_string(py(series[s][i])) + " ";
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(colors[s % 4]) +
           "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    svg += "<text x=\"" + std::to_string(width - margin + 4) + "\" y=\"" +
           std::to_string(py(series[s].back())) + "\" font-size=\"12\">" + names[s] + "</text>\n";
  }
  for (double x : xs) {
    svg += "<text x=\"" + std::to_string(px(x) - 8) + "\" y=\"" +
           std::to_string(height - margin + 16) + "\" font-size=\"11\">" + format_double(x).substr(0, 4) +
           "</text>\n";
  }
  svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"" + std::to_string(height - 12) +
         "\" font-size=\"12\">" + x_label + "</text>\n";
  svg += "<text x=\"14\" y=\"" + std::to_string(height / 2) + "\" font-size=\"12\" transform=\"rotate(-90 14 " +
         std::to_string(height / 2) + ")\">" + y_label + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

struct EvalOutcome {
  double r1 = 0.0;
  double r5 = 0.0;
  double probe_acc = 0.0;
};

// Pretrains under cfg (writing the run directory) and evaluates retrieval and
// the linear probe on the resulting backbone.
inline EvalOutcome run_and_eval(RunConfig cfg, bool with_probe = true) {
  cfg.validate();
  const Dataset dataset = make_dataset(cfg.dataset);
  const PartitionSpec partition = build_partition(cfg);
  const nlohmann::json snapshot = run_config_to_json(cfg);
  const std::string digest = config_digest(cfg);
  const PretrainResult result = run_pretraining(cfg.engine_config(), cfg.dataset, cfg.model,
                                                dataset, partition, digest, &snapshot);
  const WeightSet backbone = filter_role(result.state.global_weights, Role::backbone);
  const EmbeddingMatrix train_emb = embed_all(backbone, dataset.train);
  const EmbeddingMatrix test_emb = embed_all(backbone, dataset.test);
  const RetrievalReport report = knn_retrieval(train_emb, labels_of(dataset.train), test_emb,
                                               labels_of(dataset.test), {1, 5});
  EvalOutcome outcome;
  outcome.r1 = report.recall_at_k.at(1);
  outcome.r5 = report.recall_at_k.at(5);
  if (with_probe) {
    outcome.probe_acc = linear_probe(backbone, dataset.train, dataset.test,
                                     cfg.dataset.n_classes(), cfg.evaluation.probe);
  }
  return outcome;
}

inline int cmd_reproduce(const std::string& figure_id, const std::string& out_dir,
                         std::optional<int> rounds_override);

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"Deterministic federated self-supervised video pretraining simulator"};
  app.require_subcommand(1);

  std::string config_path, out_path, ckpt_path, run_dir, ks_text = "1,5";
  std::string levels_text = "0:0.5:0.1", range_text = "-1:1", svg_path, figure_id, split = "both";
  bool force = false, one_d = false, recompute = false;
  int grid = 41, limit = 0;
  std::optional<int> epochs_override, rounds_override;
  std::uint64_t probe_seed = 0;
  bool probe_seed_set = false;
  std::uint64_t curve_seed = 1;
  std::uint64_t landscape_seed = 0;
  cli_detail::PretrainOverrides overrides;

  auto* partition_cmd = app.add_subcommand("partition", "Write the client partition as JSON");
  partition_cmd->add_option("--config", config_path, "run config JSON");
  partition_cmd->add_option("--out", out_path, "output path (default partition.json)");
  partition_cmd->add_flag("--force", force, "overwrite an existing file");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Run federated pretraining");
  pretrain_cmd->add_option("--config", config_path, "run config JSON");
  pretrain_cmd->add_option("--out", overrides.output_dir, "run directory override");
  pretrain_cmd->add_option("--strategy", overrides.strategy, "fedavg|fedvssl");
  pretrain_cmd->add_option("--alpha", overrides.alpha, "loss-weighting share in [0,1]");
  pretrain_cmd->add_option("--beta", overrides.beta, "past global models in the average");
  pretrain_cmd->add_option("--partial", overrides.partial, "1 = backbone only, 0 = full model");
  pretrain_cmd->add_option("--rounds", overrides.rounds, "round count override");
  pretrain_cmd->add_option("--seed", overrides.seed, "master seed override");

  auto* central_cmd = app.add_subcommand("centralized", "Train the pooled-data baseline");
  central_cmd->add_option("--config", config_path, "run config JSON");
  central_cmd->add_option("--out", out_path, "output directory override");
  central_cmd->add_option("--epochs", epochs_override, "epoch budget override");
  central_cmd->add_option("--seed", overrides.seed, "master seed override");

  auto* retrieval_cmd = app.add_subcommand("eval-retrieval", "KNN retrieval recall of a checkpoint");
  retrieval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  retrieval_cmd->add_option("--config", config_path, "config (default: sibling config.json)");
  retrieval_cmd->add_option("--ks", ks_text, "comma-separated k list");
  retrieval_cmd->add_option("--out", out_path, "write the JSON report here");

  auto* probe_cmd = app.add_subcommand("eval-probe", "Linear probe accuracy of a checkpoint");
  probe_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  probe_cmd->add_option("--config", config_path, "config (default: sibling config.json)");
  probe_cmd->add_option("--epochs", epochs_override, "probe epochs override");
  probe_cmd->add_option("--seed", probe_seed, "probe seed override")->each([&](const std::string&) {
    probe_seed_set = true;
  });
  probe_cmd->add_option("--out", out_path, "write the JSON report here");

  auto* perturb_cmd = app.add_subcommand("probe-perturbation", "Retrieval under weight noise");
  perturb_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  perturb_cmd->add_option("--config", config_path, "config (default: sibling config.json)");
  perturb_cmd->add_option("--levels", levels_text, "start:end:step noise levels");
  perturb_cmd->add_option("--seed", curve_seed, "noise seed");
  perturb_cmd->add_option("--out", out_path, "write the JSON report here");
  perturb_cmd->add_option("--svg", svg_path, "also write an SVG line chart");

  auto* landscape_cmd = app.add_subcommand("landscape", "Loss surface around a checkpoint");
  landscape_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  landscape_cmd->add_option("--config", config_path, "config (default: sibling config.json)");
  landscape_cmd->add_option("--grid", grid, "odd grid size per axis");
  landscape_cmd->add_option("--range", range_text, "lo:hi coefficient range");
  landscape_cmd->add_flag("--1d", one_d, "vary only the first direction");
  landscape_cmd->add_option("--seed", landscape_seed, "direction seed");
  landscape_cmd->add_option("--out", out_path, "CSV output (default landscape.csv)");

  auto* divergence_cmd = app.add_subcommand("divergence", "Per-round client divergence stats");
  divergence_cmd->add_option("--run-dir", run_dir, "run directory")->required();
  divergence_cmd->add_flag("--recompute", recompute, "replay rounds from checkpoints");
  divergence_cmd->add_option("--out", out_path, "write the JSON report here");

  auto* reproduce_cmd = app.add_subcommand("reproduce", "Run a pinned experiment recipe");
  reproduce_cmd->add_option("figure_id", figure_id,
                            "one of table2, table4, fig3, fig4, fig5, fig6")
      ->required();
  reproduce_cmd->add_option("--out", out_path, "report directory (default reports/<id>)");
  reproduce_cmd->add_option("--rounds", rounds_override, "round override for quick runs");

  auto* dump_cmd = app.add_subcommand("dataset-dump", "Write videos as raw f32 plus a JSON index");
  dump_cmd->add_option("--config", config_path, "run config JSON");
  dump_cmd->add_option("--out", out_path, "output directory")->required();
  dump_cmd->add_option("--split", split, "train, test or both");
  dump_cmd->add_option("--limit", limit, "max videos per split (0 = all)");

  std::vector<const char*> argv;
  argv.push_back("fedvid");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (partition_cmd->parsed()) {
      const RunConfig cfg = cli_detail::load_config_or_default(config_path);
      const std::filesystem::path dest = out_path.empty() ? "partition.json" : out_path;
      if (std::filesystem::exists(dest) && !force) {
        throw Error(ErrorKind::io, dest.string() + " exists; pass --force to overwrite");
      }
      save_partition(build_partition(cfg), dest);
      std::cout << "wrote " << dest.string() << "\n";
      return 0;
    }

    if (pretrain_cmd->parsed()) {
      RunConfig cfg = cli_detail::load_config_or_default(config_path);
      overrides.apply(cfg);
      const Dataset dataset = make_dataset(cfg.dataset);
      const PartitionSpec partition = build_partition(cfg);
      const nlohmann::json snapshot = run_config_to_json(cfg);
      const PretrainResult result = run_pretraining(cfg.engine_config(), cfg.dataset, cfg.model,
                                                    dataset, partition, config_digest(cfg), &snapshot);
      std::cout << "run directory: " << cfg.output_dir << "\n";
      if (!result.records.empty()) {
        std::cout << "final round mean loss: " << format_double(result.records.back().mean_loss)
                  << "\n";
      }
      return 0;
    }

    if (central_cmd->parsed()) {
      RunConfig cfg = cli_detail::load_config_or_default(config_path);
      if (overrides.seed) {
        cfg.seeds.master = *overrides.seed;
        cfg.dataset.seed = cfg.seeds.dataset_seed();
      }
      if (!out_path.empty()) cfg.output_dir = out_path;
      cfg.validate();
      const int epochs = epochs_override.value_or(cfg.resolved_centralized_epochs());
      const Dataset dataset = make_dataset(cfg.dataset);
      const nlohmann::json snapshot = run_config_to_json(cfg);
      const CentralizedResult result = run_centralized(epochs, cfg.engine_config(), cfg.dataset,
                                                       cfg.model, dataset, config_digest(cfg), &snapshot);
      std::cout << "output directory: " << cfg.output_dir << "\n";
      if (!result.epoch_losses.empty()) {
        std::cout << "final epoch mean loss: " << format_double(result.epoch_losses.back()) << "\n";
      }
      return 0;
    }

    if (retrieval_cmd->parsed()) {
      const auto bundle = cli_detail::load_bundle(ckpt_path, config_path);
      std::vector<int> ks;
      std::stringstream ss(ks_text);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) ks.push_back(std::stoi(tok));
      }
      if (ks.empty()) throw Error(ErrorKind::config, "--ks produced an empty list");
      const Dataset dataset = make_dataset(bundle.config.dataset);
      const WeightSet backbone = filter_role(bundle.weights, Role::backbone);
      const RetrievalReport report =
          knn_retrieval(embed_all(backbone, dataset.train), labels_of(dataset.train),
                        embed_all(backbone, dataset.test), labels_of(dataset.test), ks);
      cli_detail::emit_json(retrieval_report_to_json(report), out_path);
      return 0;
    }

    if (probe_cmd->parsed()) {
      const auto bundle = cli_detail::load_bundle(ckpt_path, config_path);
      ProbeConfig pcfg = bundle.config.evaluation.probe;
      if (epochs_override) pcfg.epochs = *epochs_override;
      if (probe_seed_set) pcfg.seed = probe_seed;
      const Dataset dataset = make_dataset(bundle.config.dataset);
      const WeightSet backbone = filter_role(bundle.weights, Role::backbone);
      const double acc = linear_probe(backbone, dataset.train, dataset.test,
                                      bundle.config.dataset.n_classes(), pcfg);
      cli_detail::emit_json({{"top1_accuracy", acc},
                             {"n_classes", bundle.config.dataset.n_classes()},
                             {"epochs", pcfg.epochs}},
                            out_path);
      return 0;
    }

    if (perturb_cmd->parsed()) {
      const auto bundle = cli_detail::load_bundle(ckpt_path, config_path);
      const std::vector<double> levels = cli_detail::parse_level_range(levels_text);
      const Dataset dataset = make_dataset(bundle.config.dataset);
      const WeightSet backbone = filter_role(bundle.weights, Role::backbone);
      const PerturbationCurve curve =
          perturb_and_eval(backbone, levels, curve_seed, dataset.train, labels_of(dataset.train),
                           dataset.test, labels_of(dataset.test));
      cli_detail::emit_json(perturbation_curve_to_json(curve), out_path);
      if (!svg_path.empty()) {
        cli_detail::write_text(svg_path,
                               cli_detail::svg_line_chart(curve.levels, {curve.recall_at_1},
                                                          {"R@1"}, "perturbation level", "recall@1"));
      }
      return 0;
    }

    if (landscape_cmd->parsed()) {
      const auto bundle = cli_detail::load_bundle(ckpt_path, config_path);
      LandscapeConfig lcfg;
      lcfg.grid = grid;
      cli_detail::parse_pair_range(range_text, lcfg.range_min, lcfg.range_max);
      lcfg.one_d = one_d;
      lcfg.seed = landscape_seed;
      const Dataset dataset = make_dataset(bundle.config.dataset);
      const LandscapeGrid result = loss_landscape(bundle.weights, bundle.config.model,
                                                  bundle.config.task, dataset.test,
                                                  bundle.config.dataset, lcfg);
      std::string csv = "a,b,loss\n";
      for (std::size_t ai = 0; ai < result.a_coeffs.size(); ++ai) {
        for (std::size_t bi = 0; bi < result.b_coeffs.size(); ++bi) {
          csv += format_double(result.a_coeffs[ai]) + "," + format_double(result.b_coeffs[bi]) +
                 "," + format_double(result.at(ai, bi)) + "\n";
        }
      }
      const std::filesystem::path dest = out_path.empty() ? "landscape.csv" : out_path;
      cli_detail::write_text(dest, csv);
      std::cout << "wrote " << dest.string() << "\n";
      return 0;
    }

    if (divergence_cmd->parsed()) {
      const DivergenceSummary summary =
          recompute ? divergence_recompute(run_dir) : divergence_summary(run_dir);
      cli_detail::emit_json(divergence_to_json(summary), out_path);
      return 0;
    }

    if (reproduce_cmd->parsed()) {
      return cli_detail::cmd_reproduce(figure_id, out_path, rounds_override);
    }

    if (dump_cmd->parsed()) {
      const RunConfig cfg = cli_detail::load_config_or_default(config_path);
      const Dataset dataset = make_dataset(cfg.dataset);
      const std::filesystem::path dir = out_path;
      std::error_code ec;
      std::filesystem::create_directories(dir, ec);
      if (ec) throw Error(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
      nlohmann::json index = nlohmann::json::array();
      auto dump_split = [&](const std::vector<Video>& videos, const std::string& name) {
        std::size_t count = videos.size();
        if (limit > 0) count = std::min<std::size_t>(count, static_cast<std::size_t>(limit));
        for (std::size_t i = 0; i < count; ++i) {
          const Video& v = videos[i];
          const std::string file = name + "_" + std::to_string(i) + ".f32";
          std::ofstream out(dir / file, std::ios::binary);
          if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / file).string());
          for (double d : v.frames.data) {
            const float f = static_cast<float>(d);
            out.write(reinterpret_cast<const char*>(&f), sizeof(float));
          }
          index.push_back({{"path", file},
                           {"shape", v.frames.shape},
                           {"label", v.label},
                           {"gen_params",
                            {{"x0", v.gen_params.x0},
                             {"y0", v.gen_params.y0},
                             {"vx", v.gen_params.vx},
                             {"vy", v.gen_params.vy},
                             {"patch_side", v.gen_params.patch_side},
                             {"intensity", v.gen_params.intensity}}}});
        }
      };
      if (split == "train" || split == "both") dump_split(dataset.train, "train");
      if (split == "test" || split == "both") dump_split(dataset.test, "test");
      if (split != "train" && split != "test" && split != "both") {
        throw Error(ErrorKind::config, "--split must be train, test or both");
      }
      cli_detail::write_text(dir / "index.json", index.dump(1) + "\n");
      std::cout << "wrote " << index.size() << " videos to " << dir.string() << "\n";
      return 0;
    }

    throw Error(ErrorKind::config, "no subcommand given");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli_detail::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

namespace cli_detail {

struct RecipeRow {
  std::string label;
  EvalOutcome outcome;
};

inline std::string recipe_markdown(const std::string& title,
                                   const std::vector<RecipeRow>& rows, bool with_probe) {
  std::string md = "# " + title + "\n\n";
  md += with_probe ? "| setting | R@1 | R@5 | probe top-1 |\n|---|---|---|---|\n"
                   : "| setting | R@1 | R@5 |\n|---|---|---|\n";
  char buf[64];
  for (const auto& row : rows) {
    if (with_probe) {
      std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f | %.4f |\n", row.label.c_str(),
                    row.outcome.r1, row.outcome.r5, row.outcome.probe_acc);
    } else {
      std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f |\n", row.label.c_str(), row.outcome.r1,
                    row.outcome.r5);
    }
    md += buf;
  }
  return md;
}

inline std::string recipe_csv(const std::vector<RecipeRow>& rows) {
  std::string csv = "setting,r_at_1,r_at_5,probe_top1\n";
  for (const auto& row : rows) {
    csv += row.label + "," + format_double(row.outcome.r1) + "," + format_double(row.outcome.r5) +
           "," + format_double(row.outcome.probe_acc) + "\n";
  }
  return csv;
}

inline int cmd_reproduce(const std::string& figure_id, const std::string& out_dir_arg,
                         std::optional<int> rounds_override) {
  static const std::vector<std::string> known = {"table2", "table4", "fig3",
                                                 "fig4",   "fig5",   "fig6"};
  if (std::find(known.begin(), known.end(), figure_id) == known.end()) {
    std::string valid;
    for (const auto& k : known) valid += (valid.empty() ? "" : ", ") + k;
    throw Error(ErrorKind::config, "unknown recipe '" + figure_id + "' (valid: " + valid + ")");
  }
  const std::filesystem::path out_dir = out_dir_arg.empty()
                                            ? std::filesystem::path("reports") / figure_id
                                            : std::filesystem::path(out_dir_arg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + out_dir.string() + ": " + ec.message());

  auto base_config = [&](std::uint64_t seed, const std::string& run_name) {
    RunConfig cfg = default_run_config();
    if (rounds_override) cfg.rounds = *rounds_override;
    cfg.seeds.master = seed;
    cfg.dataset.seed = cfg.seeds.dataset_seed();
    cfg.output_dir = (out_dir / run_name).string();
    return cfg;
  };

  if (figure_id == "table2") {
    // IID vs label-shard non-IID under plain full-model federated averaging,
    // three seeds each.
    std::vector<RecipeRow> rows;
    for (const std::string mode : {"iid", "class_noniid"}) {
      for (std::uint64_t seed : {11u, 12u, 13u}) {
        RunConfig cfg = base_config(seed, mode + "_seed" + std::to_string(seed));
        cfg.partition.mode = partition_mode_from_string(mode);
        cfg.aggregation.strategy = AggregationStrategy::fedavg_baseline;
        cfg.aggregation.partial_update = false;
        std::cerr << "table2: running " << mode << " seed " << seed << "\n";
        rows.push_back({mode + " seed=" + std::to_string(seed), run_and_eval(cfg, false)});
      }
    }
    write_text(out_dir / "report.md", recipe_markdown("IID vs non-IID retrieval", rows, false));
    write_text(out_dir / "table2.csv", recipe_csv(rows));
  } else if (figure_id == "table4") {
    std::vector<RecipeRow> rows;
    {
      RunConfig cfg = base_config(21, "fedavg_baseline");
      cfg.aggregation.strategy = AggregationStrategy::fedavg_baseline;
      cfg.aggregation.partial_update = false;
      std::cerr << "table4: running fedavg baseline\n";
      rows.push_back({"fedavg_baseline", run_and_eval(cfg)});
    }
    const std::pair<double, int> settings[] = {{0.0, 0}, {1.0, 0}, {0.0, 1},
                                               {1.0, 1}, {0.9, 0}, {0.9, 1}};
    for (const auto& [alpha, beta] : settings) {
      char run_name[64];
      std::snprintf(run_name, sizeof(run_name), "fedvssl_a%.1f_b%d", alpha, beta);
      RunConfig cfg = base_config(21, run_name);
      cfg.aggregation.strategy = AggregationStrategy::fedvssl;
      cfg.aggregation.alpha = alpha;
      cfg.aggregation.beta = beta;
      cfg.aggregation.partial_update = true;
      std::cerr << "table4: running fedvssl alpha=" << alpha << " beta=" << beta << "\n";
      char label[64];
      std::snprintf(label, sizeof(label), "fedvssl(alpha=%.1f beta=%d)", alpha, beta);
      rows.push_back({label, run_and_eval(cfg)});
    }
    write_text(out_dir / "report.md",
               recipe_markdown("Aggregation strategy sweep", rows, true));
    write_text(out_dir / "table4.csv", recipe_csv(rows));
  } else if (figure_id == "fig3" || figure_id == "fig4") {
    // Both recipes compare a centralized baseline with a federated run.
    RunConfig fed_cfg = base_config(31, "fedavg_full");
    fed_cfg.aggregation.strategy = AggregationStrategy::fedavg_baseline;
    fed_cfg.aggregation.partial_update = false;
    std::cerr << figure_id << ": running federated baseline\n";
    const Dataset dataset = make_dataset(fed_cfg.dataset);
    const PartitionSpec partition = build_partition(fed_cfg);
    const nlohmann::json fed_snapshot = run_config_to_json(fed_cfg);
    const PretrainResult fed = run_pretraining(fed_cfg.engine_config(), fed_cfg.dataset,
                                               fed_cfg.model, dataset, partition,
                                               config_digest(fed_cfg), &fed_snapshot);
    RunConfig cent_cfg = base_config(31, "centralized");
    std::cerr << figure_id << ": running centralized baseline\n";
    const nlohmann::json cent_snapshot = run_config_to_json(cent_cfg);
    const CentralizedResult cent =
        run_centralized(cent_cfg.resolved_centralized_epochs(), cent_cfg.engine_config(),
                        cent_cfg.dataset, cent_cfg.model, dataset, config_digest(cent_cfg),
                        &cent_snapshot);
    if (figure_id == "fig3") {
      LandscapeConfig lcfg;
      lcfg.grid = 21;
      lcfg.seed = 5;
      auto write_grid = [&](const WeightSet& w, const std::string& name) {
        const LandscapeGrid g = loss_landscape(w, fed_cfg.model, fed_cfg.task, dataset.test,
                                               fed_cfg.dataset, lcfg);
        std::string csv = "a,b,loss\n";
        for (std::size_t ai = 0; ai < g.a_coeffs.size(); ++ai) {
          for (std::size_t bi = 0; bi < g.b_coeffs.size(); ++bi) {
            csv += format_double(g.a_coeffs[ai]) + "," + format_double(g.b_coeffs[bi]) + "," +
                   format_double(g.at(ai, bi)) + "\n";
          }
        }
        write_text(out_dir / (name + "_landscape.csv"), csv);
      };
      write_grid(cent.weights, "centralized");
      write_grid(fed.state.global_weights, "federated");
      write_text(out_dir / "report.md",
                 "# Loss landscapes\n\nCSV grids: centralized_landscape.csv, "
                 "federated_landscape.csv (columns a, b, loss).\n");
    } else {
      const std::vector<double> levels = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
      const auto train_labels = labels_of(dataset.train);
      const auto test_labels = labels_of(dataset.test);
      const PerturbationCurve fed_curve = perturb_and_eval(
          filter_role(fed.state.global_weights, Role::backbone), levels, 9, dataset.train,
          train_labels, dataset.test, test_labels);
      const PerturbationCurve cent_curve =
          perturb_and_eval(filter_role(cent.weights, Role::backbone), levels, 9, dataset.train,
                           train_labels, dataset.test, test_labels);
      std::string csv = "level,federated_r1,centralized_r1\n";
      for (std::size_t i = 0; i < levels.size(); ++i) {
        csv += format_double(levels[i]) + "," + format_double(fed_curve.recall_at_1[i]) + "," +
               format_double(cent_curve.recall_at_1[i]) + "\n";
      }
      write_text(out_dir / "fig4.csv", csv);
      write_text(out_dir / "fig4.svg",
                 svg_line_chart(levels, {fed_curve.recall_at_1, cent_curve.recall_at_1},
                                {"federated", "centralized"}, "perturbation level", "recall@1"));
      write_text(out_dir / "report.md",
                 "# Perturbation stability\n\nSee fig4.csv / fig4.svg. Level 0 equals the "
                 "unperturbed retrieval accuracy by construction.\n");
    }
  } else if (figure_id == "fig5") {
    // Recall over rounds against the centralized target.
    RunConfig cent_cfg = base_config(41, "centralized");
    const Dataset dataset = make_dataset(cent_cfg.dataset);
    std::cerr << "fig5: running centralized target\n";
    const nlohmann::json cent_snapshot = run_config_to_json(cent_cfg);
    const CentralizedResult cent =
        run_centralized(cent_cfg.resolved_centralized_epochs(), cent_cfg.engine_config(),
                        cent_cfg.dataset, cent_cfg.model, dataset, config_digest(cent_cfg),
                        &cent_snapshot);
    const auto train_labels = labels_of(dataset.train);
    const auto test_labels = labels_of(dataset.test);
    auto recall_of = [&](const WeightSet& w) {
      const WeightSet backbone = filter_role(w, Role::backbone);
      return knn_retrieval(embed_all(backbone, dataset.train), train_labels,
                           embed_all(backbone, dataset.test), test_labels, {1})
          .recall_at_k.at(1);
    };
    const double target = recall_of(cent.weights);

    std::string csv = "strategy,round,r_at_1\n";
    nlohmann::json rounds_to_target = nlohmann::json::object();
    for (const std::string strategy : {"fedavg", "fedvssl"}) {
      RunConfig cfg = base_config(41, strategy + "_curve");
      if (strategy == "fedavg") {
        cfg.aggregation.strategy = AggregationStrategy::fedavg_baseline;
        cfg.aggregation.partial_update = false;
      } else {
        cfg.aggregation.strategy = AggregationStrategy::fedvssl;
        cfg.aggregation.alpha = 0.9;
        cfg.aggregation.beta = 0;
        cfg.aggregation.partial_update = true;
      }
      cfg.checkpoint_every = std::max(1, cfg.rounds / 10);
      std::cerr << "fig5: running " << strategy << " curve\n";
      const PartitionSpec partition = build_partition(cfg);
      const nlohmann::json snapshot = run_config_to_json(cfg);
      run_pretraining(cfg.engine_config(), cfg.dataset, cfg.model, dataset, partition,
                      config_digest(cfg), &snapshot);
      int first_reached = -1;
      for (int r = cfg.checkpoint_every; r <= cfg.rounds; r += cfg.checkpoint_every) {
        const auto [w, meta] = load_checkpoint(std::filesystem::path(cfg.output_dir) /
                                               ("ckpt_round_" + std::to_string(r) + ".ckpt.json"));
        (void)meta;
        const double r1 = recall_of(w);
        csv += strategy + "," + std::to_string(r) + "," + format_double(r1) + "\n";
        if (first_reached < 0 && r1 >= target) first_reached = r;
      }
      rounds_to_target[strategy] = first_reached;
    }
    write_text(out_dir / "fig5.csv", csv);
    nlohmann::json summary = {{"centralized_target_r1", target},
                              {"first_round_reaching_target", rounds_to_target}};
    write_text(out_dir / "report.md", "# Rounds to target accuracy\n\n```\n" + summary.dump(1) +
                                          "\n```\n\nPer-checkpoint curve in fig5.csv.\n");
  } else {  // fig6
    RunConfig cfg = base_config(51, "divergence_run");
    cfg.aggregation.strategy = AggregationStrategy::fedavg_baseline;
    cfg.aggregation.partial_update = false;  // both roles cross the wire
    std::cerr << "fig6: running full-aggregation run\n";
    const Dataset dataset = make_dataset(cfg.dataset);
    const PartitionSpec partition = build_partition(cfg);
    const nlohmann::json snapshot = run_config_to_json(cfg);
    run_pretraining(cfg.engine_config(), cfg.dataset, cfg.model, dataset, partition,
                    config_digest(cfg), &snapshot);
    const DivergenceSummary summary = divergence_summary(cfg.output_dir);
    std::string csv = "round,backbone_mean,backbone_std,head_mean,head_std\n";
    for (const auto& r : summary.rows) {
      csv += std::to_string(r.round) + "," + format_double(r.backbone_mean) + "," +
             format_double(r.backbone_std) + "," + format_double(r.head_mean) + "," +
             format_double(r.head_std) + "\n";
    }
    write_text(out_dir / "fig6.csv", csv);
    write_text(out_dir / "report.md",
               "# Weight divergence by role\n\nPer-round mean/std of the L2 distance between "
               "the previous global model and each participant, backbone vs head, in fig6.csv.\n");
  }

  std::cout << "report bundle: " << out_dir.string() << "\n";
  return 0;
}

}  // namespace cli_detail

}  // namespace fedvid
