#include <string>
#include <vector>

#include "exanetsim/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return exns::cli_main(args);
}
