#pragma once

#include <string>
#include <vector>

#include "samba/data.hpp"
#include "samba/decoder.hpp"
#include "samba/encoder.hpp"
#include "samba/train.hpp"

namespace samba {

struct DataConfig {
  std::string root;
  std::string train_split = "train";
  std::string val_split = "val";
  int eval_tile = 512;
  int eval_stride = 512;
  std::vector<int> excluded_classes;
};

// Everything one run needs, parsed from a [section] key = value file.
// Unknown sections or keys are rejected; flags override via "section.key".
struct RunConfig {
  SambaConfig model;
  DecoderConfig decoder;
  AugmentationConfig aug;
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "runs/out";

  void validate() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// Exact round trip: parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& cfg);

void apply_override(RunConfig& cfg, const std::string& dotted_key,
                    const std::string& value);

}  // namespace samba
