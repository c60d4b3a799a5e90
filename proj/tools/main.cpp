// SPDX-License-Identifier: Apache-2.0
//
// Single executable covering the whole workflow: dataset synthesis,
// training, evaluation, inference, gradient checking and overlay rendering.
// Exit codes: 0 success, 1 validation, 2 I/O, 3 internal.
#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "tsanet/data.hpp"
#include "tsanet/gradcheck.hpp"
#include "tsanet/image_io.hpp"
#include "tsanet/metrics.hpp"
#include "tsanet/training.hpp"

namespace fs = std::filesystem;
using namespace tsanet;

namespace {

void print_config(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "resolved config:\n";
  for (const auto& [k, v] : kv) std::cout << "  " << k << " = " << v << "\n";
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValueError("config file: expected key=value, got: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

int run_synth(const fs::path& out, int sequences, int frames, int resolution,
              uint64_t seed, bool occluders, int distractors) {
  print_config({{"out", out.string()},
                {"sequences", std::to_string(sequences)},
                {"frames", std::to_string(frames)},
                {"resolution", std::to_string(resolution)},
                {"seed", std::to_string(seed)},
                {"occluders", occluders ? "1" : "0"},
                {"distractors", std::to_string(distractors)}});
  if (sequences < 1) throw ValueError("synth: --sequences must be >= 1");
  SyntheticConfig cfg;
  cfg.resolution = resolution;
  cfg.n_frames = frames;
  cfg.occluder = occluders;
  cfg.distractors = distractors;
  for (int i = 0; i < sequences; ++i) {
    cfg.shape = static_cast<ShapeType>(i % 3);
    FrameSequence seq = generate_synthetic_sequence(cfg, mix_seed(seed, i));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seq_%05d", i);
    seq.name = buf;
    save_sequence(seq, out / buf);
    std::cout << "wrote " << (out / buf).string() << " (" << frames
              << " frames)\n";
  }
  return 0;
}

int run_train(const CLI::App* cmd, const std::vector<std::string>& data,
              const fs::path& out, const std::string& config_file,
              double lr, int iterations, const std::string& scales,
              int batch, uint64_t seed, int switch_every, bool no_taf,
              bool no_sad, bool target_residual) {
  std::map<std::string, std::string> kv;
  if (!config_file.empty()) kv = read_config_file(config_file);
  // Command-line flags override config-file values.
  if (cmd->count("--lr")) kv["learning_rate"] = std::to_string(lr);
  if (cmd->count("--iterations")) kv["iterations"] = std::to_string(iterations);
  if (cmd->count("--scales")) kv["scales"] = scales;
  if (cmd->count("--batch")) kv["batch_size"] = std::to_string(batch);
  if (cmd->count("--seed")) kv["seed"] = std::to_string(seed);
  if (cmd->count("--switch-every"))
    kv["switch_every"] = std::to_string(switch_every);
  if (cmd->count("--no-taf")) kv["taf_enabled"] = no_taf ? "0" : "1";
  if (cmd->count("--no-sad")) kv["sad_enabled"] = no_sad ? "0" : "1";
  if (cmd->count("--target-residual"))
    kv["target_residual"] = target_residual ? "1" : "0";
  TrainConfig cfg = parse_train_config(kv);

  std::vector<std::pair<std::string, std::string>> echo;
  for (const auto& root : data) echo.emplace_back("data", root);
  echo.emplace_back("out", out.string());
  std::istringstream cfg_echo(cfg.echo());
  std::string line;
  while (std::getline(cfg_echo, line)) {
    auto eq = line.find('=');
    echo.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  print_config(echo);

  std::vector<fs::path> roots(data.begin(), data.end());
  TrainResult res = train(cfg, roots, out);
  std::cout << "final loss " << res.losses.back() << "; checkpoint at "
            << (out / "checkpoint.tsck").string() << "\n";
  return 0;
}

int run_eval(const fs::path& ckpt, const fs::path& data, const fs::path& out) {
  print_config({{"ckpt", ckpt.string()},
                {"data", data.string()},
                {"out", out.string()}});
  EvalReport report = evaluate(ckpt, data, out);
  std::cout << format_report(report);
  return 0;
}

int run_infer(const fs::path& ckpt, const fs::path& seq_dir,
              const fs::path& out, const std::vector<int>& size) {
  print_config({{"ckpt", ckpt.string()},
                {"seq", seq_dir.string()},
                {"out", out.string()},
                {"size", size.empty() ? std::string("native")
                                      : std::to_string(size[0]) + "x" +
                                            std::to_string(size[1])}});
  Checkpoint loaded = load_checkpoint(ckpt);
  ModelParams model = model_from_checkpoint(loaded);
  FrameSequence seq = load_sequence(seq_dir);
  int out_h = size.empty() ? static_cast<int>(seq.height()) : size[0];
  int out_w = size.empty() ? static_cast<int>(seq.width()) : size[1];
  if (out_h < 1 || out_w < 1)
    throw ValueError("infer: --size extents must be >= 1");
  fs::create_directories(out);
  NoGradGuard ng;
  for (int t = 0; t < seq.size(); ++t) {
    auto [window, target] = make_window(seq, t, 0);
    Tensor logits = forward_segment(model, loaded.flags, window, out_h, out_w);
    std::vector<double> maskv(static_cast<size_t>(out_h) * out_w);
    for (int64_t i = 0; i < static_cast<int64_t>(out_h) * out_w; ++i)
      maskv[static_cast<size_t>(i)] =
          logits.data()[static_cast<int64_t>(out_h) * out_w + i] >
                  logits.data()[i]
              ? 1.0
              : 0.0;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d.png", t);
    write_png(out / buf,
              mask_to_gray8(Tensor::from_data({out_h, out_w}, maskv)));
  }
  std::cout << "wrote " << seq.size() << " masks to " << out.string() << "\n";
  return 0;
}

int run_gradcheck_cmd(uint64_t seed, const std::string& module,
                      bool inject_fault) {
  print_config({{"seed", std::to_string(seed)}, {"module", module}});
  bool ok = run_gradcheck_suite(module, seed, inject_fault, std::cout);
  if (!ok) {
    std::cerr << "gradient check FAILED\n";
    return 3;
  }
  std::cout << "all gradient checks passed\n";
  return 0;
}

int run_overlay(const fs::path& seq_dir, const fs::path& masks,
                const fs::path& out) {
  print_config({{"seq", seq_dir.string()},
                {"masks", masks.string()},
                {"out", out.string()}});
  if (!fs::is_directory(seq_dir / "frames"))
    throw IoError("overlay: missing " + (seq_dir / "frames").string());
  if (!fs::is_directory(masks))
    throw IoError("overlay: missing mask directory " + masks.string());
  fs::create_directories(out);
  int written = 0;
  std::vector<fs::path> frame_files;
  for (const auto& e : fs::directory_iterator(seq_dir / "frames"))
    if (e.path().extension() == ".png") frame_files.push_back(e.path());
  std::sort(frame_files.begin(), frame_files.end());
  for (const auto& frame_path : frame_files) {
    fs::path mask_path = masks / frame_path.filename();
    if (!fs::exists(mask_path)) continue;
    ImageU8 frame = read_png(frame_path);
    ImageU8 mask = read_png(mask_path);
    if (mask.width != frame.width || mask.height != frame.height ||
        mask.channels != 1)
      throw ValueError("overlay: mask/frame mismatch for " +
                       frame_path.filename().string());
    ImageU8 blend = frame;
    for (int64_t i = 0; i < static_cast<int64_t>(mask.pixels.size()); ++i) {
      if (mask.pixels[static_cast<size_t>(i)] == 0) continue;
      // 50% red tint on mask pixels.
      double r = 0.5 * frame.pixels[static_cast<size_t>(3 * i)] + 0.5 * 255.0;
      double g = 0.5 * frame.pixels[static_cast<size_t>(3 * i + 1)];
      double b = 0.5 * frame.pixels[static_cast<size_t>(3 * i + 2)];
      blend.pixels[static_cast<size_t>(3 * i)] =
          static_cast<uint8_t>(std::lround(r));
      blend.pixels[static_cast<size_t>(3 * i + 1)] =
          static_cast<uint8_t>(std::lround(g));
      blend.pixels[static_cast<size_t>(3 * i + 2)] =
          static_cast<uint8_t>(std::lround(b));
    }
    write_png(out / frame_path.filename(), blend);
    ++written;
  }
  std::cout << "wrote " << written << " overlays to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal/scale-aligned video object segmentation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic sequences");
  std::string s_out;
  int s_sequences = 4, s_frames = 8, s_resolution = 64, s_distractors = 0;
  uint64_t s_seed = 0;
  bool s_occluders = false;
  synth->add_option("--out", s_out)->required();
  synth->add_option("--sequences", s_sequences);
  synth->add_option("--frames", s_frames);
  synth->add_option("--resolution", s_resolution);
  synth->add_option("--seed", s_seed);
  synth->add_option("--occluders", s_occluders);
  synth->add_option("--distractors", s_distractors);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::vector<std::string> t_data;
  std::string t_out, t_config, t_scales = "64,96,128";
  double t_lr = 1e-4;
  int t_iterations = 500, t_batch = 1, t_switch = 128;
  uint64_t t_seed = 0;
  bool t_no_taf = false, t_no_sad = false, t_residual = false;
  tr->add_option("--data", t_data)->required();
  tr->add_option("--out", t_out)->required();
  tr->add_option("--config", t_config);
  tr->add_option("--lr", t_lr);
  tr->add_option("--iterations", t_iterations);
  tr->add_option("--scales", t_scales);
  tr->add_option("--batch", t_batch);
  tr->add_option("--seed", t_seed);
  tr->add_option("--switch-every", t_switch);
  tr->add_flag("--no-taf", t_no_taf, "disable temporal alignment fusion");
  tr->add_flag("--no-sad", t_no_sad, "use the bilinear-upsample decoder");
  tr->add_flag("--target-residual", t_residual,
               "add target features to the aligned maps");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_out;
  ev->add_option("--ckpt", e_ckpt)->required();
  ev->add_option("--data", e_data)->required();
  ev->add_option("--out", e_out)->required();

  // infer
  auto* in = app.add_subcommand("infer", "predict masks for one sequence");
  std::string i_ckpt, i_seq, i_out;
  std::vector<int> i_size;
  in->add_option("--ckpt", i_ckpt)->required();
  in->add_option("--seq", i_seq)->required();
  in->add_option("--out", i_out)->required();
  in->add_option("--size", i_size, "output H W")->expected(2);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit");
  uint64_t g_seed = 0;
  std::string g_module = "all";
  bool g_fault = false;
  gc->add_option("--seed", g_seed);
  gc->add_option("--module", g_module)
      ->check(CLI::IsMember({"all", "core", "taf", "sad", "encoder"}));
  gc->add_flag("--inject-fault", g_fault)->group("");  // testing aid, hidden

  // overlay
  auto* ov = app.add_subcommand("overlay", "blend masks over frames");
  std::string o_seq, o_masks, o_out;
  ov->add_option("--seq", o_seq)->required();
  ov->add_option("--masks", o_masks)->required();
  ov->add_option("--out", o_out)->required();

  try {
    app.parse(argc, argv);
    if (synth->parsed())
      return run_synth(s_out, s_sequences, s_frames, s_resolution, s_seed,
                       s_occluders, s_distractors);
    if (tr->parsed())
      return run_train(tr, t_data, t_out, t_config, t_lr, t_iterations,
                       t_scales, t_batch, t_seed, t_switch, t_no_taf, t_no_sad,
                       t_residual);
    if (ev->parsed()) return run_eval(e_ckpt, e_data, e_out);
    if (in->parsed()) return run_infer(i_ckpt, i_seq, i_out, i_size);
    if (gc->parsed()) return run_gradcheck_cmd(g_seed, g_module, g_fault);
    if (ov->parsed()) return run_overlay(o_seq, o_masks, o_out);
    return 3;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ValueError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
