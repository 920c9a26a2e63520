#include "mvseg/cli.hpp"

#include <CLI11.hpp>

namespace mvseg {

int run_cli(int argc, char** argv) {
  CLI::App app{"multi-view segmentation and pseudo-labeling toolkit"};
  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return 0;
}

}  // namespace mvseg
