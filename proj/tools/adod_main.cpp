#include <iostream>
#include <string>
#include <vector>

#include "adod/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return adod::run_cli(args, std::cout, std::cerr);
}
