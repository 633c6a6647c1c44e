#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "sssl/eval.hpp"
#include "sssl/gradcheck_suite.hpp"

namespace sssl {

namespace cli_detail {

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<std::size_t> parse_lengths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t v = 0;
    const char* end = item.data() + item.size();
    auto [ptr, ec] = std::from_chars(item.data(), end, v);
    if (ec != std::errc() || ptr != end || v == 0) throw usage_error("--lengths: bad entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw usage_error("--lengths: empty list");
  return out;
}

inline std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace cli_detail

// Exit codes: 0 success, 1 usage error, 2 runtime error.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"State-space self-supervised pretraining toolkit", "sssl"};
  app.require_subcommand(1);

  std::string s_out;
  std::size_t s_classes = 4, s_per_class = 50, s_size = 64;
  std::uint64_t s_seed = 0;
  auto* synth = app.add_subcommand("synth", "Write a synthetic leaf-lesion dataset");
  synth->add_option("--out", s_out, "Output directory")->required();
  synth->add_option("--classes", s_classes, "Number of classes")->capture_default_str();
  synth->add_option("--per-class", s_per_class, "Images per class")->capture_default_str();
  synth->add_option("--size", s_size, "Image side in pixels")->capture_default_str();
  synth->add_option("--seed", s_seed, "Random seed")->capture_default_str();

  std::string p_config, p_out;
  std::uint64_t p_seed = 0;
  bool p_deterministic = false;
  auto* pretrain = app.add_subcommand("pretrain", "Self-supervised pretraining from a config file");
  pretrain->add_option("--config", p_config, "Config file (key = value lines)")->required();
  auto* p_seed_opt = pretrain->add_option("--seed", p_seed, "Override the config seed");
  auto* p_out_opt = pretrain->add_option("--out", p_out, "Override the output directory");
  pretrain->add_flag("--deterministic", p_deterministic, "Single-threaded, bit-reproducible run");

  std::string r_checkpoint, r_data;
  ProbeConfig probe_cfg;
  auto* probe = app.add_subcommand("probe", "Linear-probe accuracy of a checkpoint's encoder");
  probe->add_option("--checkpoint", r_checkpoint, "Checkpoint file")->required();
  probe->add_option("--data", r_data, "Labeled dataset directory")->required();
  probe->add_option("--epochs", probe_cfg.epochs, "Probe training epochs")->capture_default_str();
  probe->add_option("--lr", probe_cfg.lr, "Probe learning rate")->capture_default_str();
  probe->add_option("--seed", probe_cfg.seed, "Split seed")->capture_default_str();

  std::string b_lengths, b_out;
  std::size_t b_repeats = 10, b_dim = 32, b_state_dim = 32;
  auto* bench = app.add_subcommand("bench", "Time the ssm and attention mixers over sequence lengths");
  bench->add_option("--lengths", b_lengths, "Comma-separated token counts")->required();
  bench->add_option("--repeats", b_repeats, "Timed repeats per length")->capture_default_str();
  bench->add_option("--dim", b_dim, "Model dimension")->capture_default_str();
  bench->add_option("--state-dim", b_state_dim, "State dimension")->capture_default_str();
  bench->add_option("--out", b_out, "Output CSV")->required();

  std::string v_checkpoint, v_image, v_out, v_target = "norm";
  auto* saliency = app.add_subcommand("saliency", "Gradient x activation saliency map as PGM");
  saliency->add_option("--checkpoint", v_checkpoint, "Checkpoint file")->required();
  saliency->add_option("--image", v_image, "Input PPM image")->required();
  saliency->add_option("--out", v_out, "Output PGM")->required();
  saliency->add_option("--target", v_target, "norm or proto:I")->capture_default_str();

  double g_tolerance = 0.0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient rule");
  gradcheck->add_option("--tolerance", g_tolerance, "Replace every per-case bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      auto ds = synth_dataset(s_out, s_classes, s_per_class, s_size, s_seed);
      out << "wrote " << ds.items.size() << " images in " << ds.class_names.size() << " classes to " << s_out << "\n";
    } else if (*pretrain) {
      TrainConfig cfg;
      try {
        cfg = load_config(p_config);
      } catch (const error& e) {
        throw cli_detail::usage_error(e.what());
      }
      if (*p_seed_opt) cfg.seed = p_seed;
      if (*p_out_opt) cfg.out = p_out;
      if (p_deterministic) cfg.deterministic = true;
      auto result = train(cfg, [&](const EpochMetrics& m) {
        err << "epoch " << m.epoch << " loss " << m.loss << " teacher_entropy " << m.teacher_entropy << " ("
            << m.epoch_ms << " ms)\n";
      });
      out << "metrics " << result.metrics_path << "\n"
          << "final " << result.final_checkpoint << "\n"
          << "best " << result.best_checkpoint << "\n"
          << "peak_mb " << cli_detail::fmt("%.3f", result.peak_mb) << "\n";
    } else if (*probe) {
      out << "accuracy " << cli_detail::fmt("%.4f", linear_probe(r_checkpoint, r_data, probe_cfg)) << "\n";
    } else if (*bench) {
      auto report = scaling_benchmark(cli_detail::parse_lengths(b_lengths), b_dim, b_state_dim, b_repeats);
      std::ofstream file(b_out);
      if (!file) fail(errc::io, "cannot write " + b_out);
      file << scaling_csv(report);
      for (const auto& w : report.warnings) err << "warning: " << w << "\n";
      for (const auto& [mixer, fit] : report.fits)
        out << mixer << " exponent " << cli_detail::fmt("%.4f", fit.exponent) << " r2 "
            << cli_detail::fmt("%.4f", fit.r2) << "\n";
    } else if (*saliency) {
      SaliencyTarget target;
      try {
        target = parse_saliency_target(v_target);
      } catch (const error& e) {
        throw cli_detail::usage_error(e.what());
      }
      auto state = load_checkpoint(v_checkpoint);
      auto map = saliency_map(state, load_ppm(v_image), target);
      write_saliency(map, v_out);
      const auto peak = map.argmax_token();
      out << "argmax_token " << peak << " (row " << peak / map.grid_w << ", col " << peak % map.grid_w << ")\n";
    } else if (*gradcheck) {
      if (g_tolerance < 0.0) throw cli_detail::usage_error("--tolerance must be positive");
      bool all = true;
      for (const auto& o : run_gradcheck_suite(g_tolerance)) {
        char line[160];
        std::snprintf(line, sizeof line, "%-26s %.3e < %.0e  %s\n", o.name.c_str(), o.error, o.tolerance,
                      o.passed() ? "ok" : "FAIL");
        out << line;
        all = all && o.passed();
      }
      return all ? 0 : 2;
    }
  } catch (const cli_detail::usage_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace sssl
