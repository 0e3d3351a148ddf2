#include <iostream>
#include <string>
#include <vector>

#include "alignreplay/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return alignreplay::cli::run(args, std::cout, std::cerr).exit_code;
}
