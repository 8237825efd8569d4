#include <string>
#include <vector>

#include "fedvid/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fedvid::run_cli(std::move(args));
}
