#include <iostream>
#include <string>
#include <vector>

#include "ctx3d/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return ctx3d::cli::run(args, std::cout, std::cerr);
}
