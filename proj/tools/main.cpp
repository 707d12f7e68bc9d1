#include <iostream>

#include "cli.hpp"
#include "dukf/config.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dukf::cli::dispatch(args, dukf::process_environment(), std::cout, std::cerr);
}
