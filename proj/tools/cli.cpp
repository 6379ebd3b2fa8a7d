#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "samba/checkpoint.hpp"
#include "samba/config.hpp"
#include "samba/errors.hpp"
#include "samba/train.hpp"

namespace fs = std::filesystem;
using namespace samba;

namespace {

// "--section.key value" and "--section.key=value" forms; every key is checked
// against the config schema, so typos fail loudly.
void apply_dotted_overrides(RunConfig& cfg, const std::vector<std::string>& extras) {
  for (size_t i = 0; i < extras.size(); ++i) {
    std::string tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.find('.') == std::string::npos)
      throw ConfigError("unrecognized argument '" + tok + "'");
    tok = tok.substr(2);
    const size_t eq = tok.find('=');
    std::string key, value;
    if (eq != std::string::npos) {
      key = tok.substr(0, eq);
      value = tok.substr(eq + 1);
    } else {
      key = tok;
      if (++i >= extras.size())
        throw ConfigError("missing value for override '--" + key + "'");
      value = extras[i];
    }
    apply_override(cfg, key, value);
  }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& extras) {
  RunConfig cfg = parse_config_file(path);
  apply_dotted_overrides(cfg, extras);
  cfg.validate();
  return cfg;
}

SambaSegmenter build_model(const RunConfig& cfg) {
  return SambaSegmenter(cfg.model, cfg.decoder, cfg.train.seed);
}

SambaSegmenter restore_model(const CheckpointData& data) {
  RunConfig saved = parse_config_text(data.config_text);
  SambaSegmenter model = build_model(saved);
  std::vector<Parameter*> params = model.parameters();
  load_parameters(params, data);
  return model;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& extras) {
  RunConfig cfg = load_run_config(config_path, extras);
  DatasetManifest data = load_manifest(cfg.data.root, cfg.data.train_split);
  SambaSegmenter model = build_model(cfg);
  std::cout << "training on " << data.size() << " images, "
            << count_parameters(model.parameters()) << " parameters\n";
  TrainResult r = train_loop(model, data, cfg.aug, cfg.train, cfg.output_dir,
                             serialize_config(cfg), &std::cout);
  std::cout << "done: final loss " << r.final_loss << ", checkpoint "
            << r.final_checkpoint << "\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::vector<std::string>& extras) {
  RunConfig cfg = load_run_config(config_path, extras);
  CheckpointData data = read_checkpoint(ckpt_path);
  SambaSegmenter model = restore_model(data);
  DatasetManifest manifest = load_manifest(cfg.data.root, cfg.data.val_split);

  EvalResult r = evaluate(model, manifest, cfg.data.eval_tile, cfg.data.eval_stride,
                          cfg.data.excluded_classes, cfg.train.scan_chunk);

  fs::create_directories(cfg.output_dir);
  std::ofstream csv(fs::path(cfg.output_dir) / "eval.csv");
  csv << "class,iou\n";
  std::printf("%-20s %8s\n", "class", "IoU");
  for (int c : r.included_classes) {
    const std::string& name = manifest.classes[static_cast<size_t>(c)].name;
    if (r.metrics.valid[static_cast<size_t>(c)]) {
      std::printf("%-20s %8.4f\n", name.c_str(), r.metrics.per_class[static_cast<size_t>(c)]);
      csv << name << ',' << r.metrics.per_class[static_cast<size_t>(c)] << '\n';
    } else {
      std::printf("%-20s %8s\n", name.c_str(), "absent");
      csv << name << ",absent\n";
    }
  }
  std::printf("%-20s %8.4f\n", "mIoU", r.metrics.mean);
  csv << "mIoU," << r.metrics.mean << '\n';
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path,
                const std::string& out_path) {
  CheckpointData data = read_checkpoint(ckpt_path);
  RunConfig saved = parse_config_text(data.config_text);
  SambaSegmenter model = restore_model(data);

  ImageU8 img = read_png_rgb(image_path);
  MaskU8 pred = predict_mask(model, img, saved.data.eval_tile, saved.data.eval_stride,
                             saved.train.scan_chunk);
  write_png_gray(out_path, pred);

  // colorize through the dataset palette when available
  std::vector<ClassInfo> classes;
  try {
    classes = load_manifest(saved.data.root, saved.data.train_split).classes;
  } catch (const Error&) {
    for (int c = 0; c < saved.model.num_classes; ++c) {
      ClassInfo ci;
      ci.index = c;
      ci.name = "class" + std::to_string(c);
      ci.color = {static_cast<uint8_t>(37 * (c + 1)), static_cast<uint8_t>(97 * (c + 1)),
                  static_cast<uint8_t>(173 * (c + 1))};
      classes.push_back(ci);
    }
  }
  ImageU8 color;
  color.h = pred.h;
  color.w = pred.w;
  color.v.resize(static_cast<size_t>(pred.h) * pred.w * 3);
  for (int y = 0; y < pred.h; ++y)
    for (int x = 0; x < pred.w; ++x) {
      const auto& rgb = classes[pred.at(y, x)].color;
      for (int c = 0; c < 3; ++c) color.at(y, x, c) = rgb[static_cast<size_t>(c)];
    }
  fs::path cp(out_path);
  cp.replace_extension();
  const std::string color_path = cp.string() + ".color.png";
  write_png_rgb(color_path, color);
  std::cout << "wrote " << out_path << " and " << color_path << "\n";
  return 0;
}

int cmd_inspect(const std::string& ckpt_path) {
  CheckpointData data = read_checkpoint(ckpt_path);
  std::cout << "format version: " << data.version << "\n";
  std::cout << "tensors: " << data.tensors.size() << "\n";
  int64_t total = 0;
  for (const auto& [name, t] : data.tensors) {
    std::cout << "  " << name << "  " << shape_str(t.shape) << "  f32\n";
    total += t.numel();
  }
  std::cout << "total parameters: " << total << "\n";
  std::cout << "embedded config:\n";
  std::istringstream ss(data.config_text);
  std::string line;
  while (std::getline(ss, line)) std::cout << "  " << line << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Samba semantic segmentation"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, image_path, out_path;

  CLI::App* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "config file")->required();
  train->allow_extras();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
  eval->add_option("--config", config_path, "config file")->required();
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->allow_extras();

  CLI::App* predict = app.add_subcommand("predict", "segment one image");
  predict->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  predict->add_option("--image", image_path, "input PNG")->required();
  predict->add_option("--out", out_path, "output class-index PNG")->required();

  CLI::App* inspect = app.add_subcommand("inspect", "describe a checkpoint");
  inspect->add_option("checkpoint", ckpt_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, train->remaining());
    if (eval->parsed()) return cmd_eval(config_path, ckpt_path, eval->remaining());
    if (predict->parsed()) return cmd_predict(ckpt_path, image_path, out_path);
    if (inspect->parsed()) return cmd_inspect(ckpt_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ManifestError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
