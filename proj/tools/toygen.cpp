#include <CLI11.hpp>

#include <iostream>

#include "samba/data.hpp"

// Writes the bundled synthetic dataset used by the toy config and tests.
int main(int argc, char** argv) {
  CLI::App app{"generate the synthetic toy dataset"};
  std::string out_dir;
  uint64_t seed = 9;
  app.add_option("dir", out_dir, "target directory")->required();
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  samba::make_toy_dataset(out_dir, seed);
  std::cout << "wrote toy dataset to " << out_dir << "\n";
  return 0;
}
