#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "samba/config.hpp"
#include "samba/image.hpp"
#include "samba/model.hpp"

using namespace samba;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("samba_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

const std::string kCli = SAMBA_CLI;
const std::string kToygen = SAMBA_TOYGEN;
const std::string kToyCfg = std::string(SAMBA_CONFIG_DIR) + "/toy.cfg";

}  // namespace

TEST_CASE("cli end to end on the toy dataset") {
  TempDir td;
  const std::string ds = (td.path / "ds").string();
  const std::string runs = (td.path / "run").string();
  const std::string log = (td.path / "log.txt").string();

  REQUIRE(run(kToygen + " " + ds + " > " + log + " 2>&1") == 0);

  const std::string common = " --config " + kToyCfg + " --data.root " + ds +
                             " --output.dir " + runs;

  SUBCASE("training writes metrics and checkpoints, override is honored") {
    CHECK(run(kCli + " train" + common +
              " --train.total_iterations 1 --train.warmup_iterations 0 --train.checkpoint_every 5 > " + log +
              " 2>&1") == 0);
    const std::string metrics = slurp(fs::path(runs) / "metrics.csv");
    CHECK(count_lines(metrics) == 2);  // header plus exactly one iteration
    CHECK(metrics.rfind("iter,lr,loss\n", 0) == 0);
    CHECK(fs::exists(fs::path(runs) / "checkpoint_final.smba"));
  }

  SUBCASE("train, then eval, predict, and inspect") {
    REQUIRE(run(kCli + " train" + common +
                " --train.total_iterations 2 --train.warmup_iterations 1 --train.checkpoint_every 9 > " + log +
                " 2>&1") == 0);
    const std::string ckpt = runs + "/checkpoint_final.smba";

    CHECK(run(kCli + " eval" + common + " --checkpoint " + ckpt + " > " + log +
              " 2>&1") == 0);
    const std::string evalcsv = slurp(fs::path(runs) / "eval.csv");
    CHECK(evalcsv.rfind("class,iou\n", 0) == 0);
    CHECK(count_lines(evalcsv) == 6);  // header + 4 classes + mIoU
    CHECK(evalcsv.find("mIoU,") != std::string::npos);

    const std::string pred = (td.path / "pred.png").string();
    CHECK(run(kCli + " predict --checkpoint " + ckpt + " --image " + ds +
              "/train/images/toy_000.png --out " + pred + " > " + log + " 2>&1") == 0);
    ImageU8 in = read_png_rgb(ds + "/train/images/toy_000.png");
    MaskU8 m = read_png_gray(pred);
    CHECK(m.h == in.h);
    CHECK(m.w == in.w);
    ImageU8 color = read_png_rgb((td.path / "pred.color.png").string());
    CHECK(color.h == in.h);
    // colorized pixels come from the palette
    std::set<std::array<uint8_t, 3>> palette = {{0x40, 0x40, 0x40},
                                                {0xC0, 0x30, 0x28},
                                                {0x30, 0xA0, 0x48},
                                                {0x30, 0x60, 0xC0}};
    for (int y = 0; y < color.h; y += 7)
      for (int x = 0; x < color.w; x += 7) {
        std::array<uint8_t, 3> px{color.at(y, x, 0), color.at(y, x, 1), color.at(y, x, 2)};
        CHECK(palette.count(px) == 1);
      }

    const std::string insp = (td.path / "inspect.txt").string();
    CHECK(run(kCli + " inspect " + ckpt + " > " + insp + " 2>&1") == 0);
    const std::string text = slurp(insp);
    // reported total equals the parameter count of the reconstructed model
    RunConfig cfg = parse_config_file(kToyCfg);
    SambaSegmenter model(cfg.model, cfg.decoder, 1);
    const std::string expect =
        "total parameters: " + std::to_string(count_parameters(model.parameters()));
    CHECK(text.find(expect) != std::string::npos);
    CHECK(text.find("format version: 1") != std::string::npos);
  }

  SUBCASE("usage and corruption exit codes") {
    // missing dataset root
    CHECK(run(kCli + " train --config " + kToyCfg + " --data.root " +
              (td.path / "nowhere").string() + " --output.dir " + runs + " > " + log +
              " 2>&1") == 2);
    // unknown override key
    CHECK(run(kCli + " train" + common + " --train.nope 1 > " + log + " 2>&1") == 2);
    // missing required flag
    CHECK(run(kCli + " train > " + log + " 2>&1") == 2);

    // corrupt checkpoint: bad magic, then a truncated real one
    const std::string bad = (td.path / "bad.smba").string();
    std::ofstream(bad) << "not a checkpoint";
    CHECK(run(kCli + " inspect " + bad + " > " + log + " 2>&1") == 4);

    REQUIRE(run(kCli + " train" + common + " --train.total_iterations 1 --train.warmup_iterations 0 > " + log +
                " 2>&1") == 0);
    const std::string good = slurp(fs::path(runs) / "checkpoint_final.smba");
    const std::string trunc = (td.path / "trunc.smba").string();
    std::ofstream(trunc, std::ios::binary)
        .write(good.data(), static_cast<std::streamsize>(good.size() / 3));
    CHECK(run(kCli + " eval" + common + " --checkpoint " + trunc + " > " + log +
              " 2>&1") == 4);
  }
}
