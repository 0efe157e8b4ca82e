#include <iostream>

#include "selfore/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return selfore::cli::run(args, std::cout, std::cerr);
}
