#include <iostream>
#include <string>
#include <vector>

#include "confound_em/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return confound_em::run_cli(args, std::cout, std::cerr);
}
