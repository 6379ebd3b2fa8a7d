#include "samba/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "samba/errors.hpp"

namespace samba {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  return x;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return x;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(static_cast<int>(parse_int(key, trim(item))));
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::string key;  // "section.name"
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_FIELD(path, expr)                                                        \
  Field{path, [](RunConfig& c, const std::string& v) {                              \
          expr = static_cast<int>(parse_int(path, v));                              \
        },                                                                           \
        [](const RunConfig& c) { return std::to_string(expr); }}

#define DBL_FIELD(path, expr)                                              \
  Field{path,                                                              \
        [](RunConfig& c, const std::string& v) { expr = parse_double(path, v); }, \
        [](const RunConfig& c) { return fmt_double(expr); }}

#define STR_FIELD(path, expr)                                       \
  Field{path, [](RunConfig& c, const std::string& v) { expr = v; }, \
        [](const RunConfig& c) { return expr; }}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      INT_FIELD("model.base_channels", c.model.base_channels),
      Field{"model.stage_depths",
            [](RunConfig& c, const std::string& v) {
              const std::vector<int> d = parse_int_list("model.stage_depths", v);
              if (d.size() != 4)
                throw ConfigError("model.stage_depths needs exactly 4 entries");
              for (int i = 0; i < 4; ++i) c.model.stage_depths[static_cast<size_t>(i)] = d[static_cast<size_t>(i)];
            },
            [](const RunConfig& c) {
              return fmt_int_list({c.model.stage_depths[0], c.model.stage_depths[1],
                                   c.model.stage_depths[2], c.model.stage_depths[3]});
            }},
      DBL_FIELD("model.mlp_ratio", c.model.mlp_ratio),
      INT_FIELD("model.d_state", c.model.mamba.d_state),
      INT_FIELD("model.expansion", c.model.mamba.expansion),
      INT_FIELD("model.conv_kernel", c.model.mamba.conv_kernel),
      INT_FIELD("model.dt_rank", c.model.mamba.dt_rank),
      INT_FIELD("model.num_classes", c.model.num_classes),

      INT_FIELD("decoder.fpn_channels", c.decoder.fpn_channels),
      Field{"decoder.pool_scales",
            [](RunConfig& c, const std::string& v) {
              c.decoder.pool_scales = parse_int_list("decoder.pool_scales", v);
            },
            [](const RunConfig& c) { return fmt_int_list(c.decoder.pool_scales); }},
      DBL_FIELD("decoder.dropout", c.decoder.dropout_rate),

      DBL_FIELD("aug.scale_min", c.aug.scale_min),
      DBL_FIELD("aug.scale_max", c.aug.scale_max),
      INT_FIELD("aug.crop", c.aug.crop),
      DBL_FIELD("aug.hflip_prob", c.aug.hflip_prob),
      DBL_FIELD("aug.vflip_prob", c.aug.vflip_prob),
      DBL_FIELD("aug.photometric_prob", c.aug.photometric_prob),
      DBL_FIELD("aug.brightness_delta", c.aug.brightness_delta),
      DBL_FIELD("aug.contrast_min", c.aug.contrast_min),
      DBL_FIELD("aug.contrast_max", c.aug.contrast_max),
      DBL_FIELD("aug.saturation_min", c.aug.saturation_min),
      DBL_FIELD("aug.saturation_max", c.aug.saturation_max),
      DBL_FIELD("aug.hue_delta", c.aug.hue_delta),

      INT_FIELD("train.total_iterations", c.train.total_iterations),
      INT_FIELD("train.batch_size", c.train.batch_size),
      DBL_FIELD("train.base_lr", c.train.base_lr),
      DBL_FIELD("train.weight_decay", c.train.weight_decay),
      INT_FIELD("train.warmup_iterations", c.train.warmup_iterations),
      DBL_FIELD("train.poly_power", c.train.poly_power),
      DBL_FIELD("train.beta1", c.train.beta1),
      DBL_FIELD("train.beta2", c.train.beta2),
      DBL_FIELD("train.grad_clip", c.train.grad_clip),
      Field{"train.seed",
            [](RunConfig& c, const std::string& v) {
              c.train.seed = static_cast<uint64_t>(parse_int("train.seed", v));
            },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      INT_FIELD("train.checkpoint_every", c.train.checkpoint_every),
      INT_FIELD("train.scan_chunk", c.train.scan_chunk),

      STR_FIELD("data.root", c.data.root),
      STR_FIELD("data.train_split", c.data.train_split),
      STR_FIELD("data.val_split", c.data.val_split),
      INT_FIELD("data.eval_tile", c.data.eval_tile),
      INT_FIELD("data.eval_stride", c.data.eval_stride),
      Field{"data.excluded_classes",
            [](RunConfig& c, const std::string& v) {
              c.data.excluded_classes = parse_int_list("data.excluded_classes", v);
            },
            [](const RunConfig& c) { return fmt_int_list(c.data.excluded_classes); }},

      STR_FIELD("output.dir", c.output_dir),
  };
  return fields;
}

#undef INT_FIELD
#undef DBL_FIELD
#undef STR_FIELD

const Field* find_field(const std::string& dotted) {
  for (const Field& f : schema())
    if (f.key == dotted) return &f;
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  DecoderConfig d = decoder;
  d.num_classes = model.num_classes;
  d.validate();
  aug.validate();
  train.validate();
  if (data.eval_tile < 32 || data.eval_tile % 32 != 0)
    throw ConfigError("data.eval_tile must be a positive multiple of 32");
  if (data.eval_stride < 1 || data.eval_stride > data.eval_tile)
    throw ConfigError("data.eval_stride must be in [1, eval_tile]");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key +
                        "' outside any [section]");
    const std::string dotted = section + "." + key;
    const Field* f = find_field(dotted);
    if (!f) throw ConfigError("unknown config key '" + dotted + "'");
    f->set(cfg, value);
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const Field& f : schema()) {
    const std::string sec = f.key.substr(0, f.key.find('.'));
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(f.key.find('.') + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void apply_override(RunConfig& cfg, const std::string& dotted_key,
                    const std::string& value) {
  const Field* f = find_field(dotted_key);
  if (!f) throw ConfigError("unknown config key '" + dotted_key + "'");
  f->set(cfg, value);
}

}  // namespace samba
