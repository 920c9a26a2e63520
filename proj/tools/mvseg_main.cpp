// CLI entry point; subcommands are registered in src/cli.cpp.
#include "mvseg/cli.hpp"

int main(int argc, char** argv) { return mvseg::run_cli(argc, argv); }
