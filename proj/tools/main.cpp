#include <string>
#include <vector>

#include "untrack/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return untrack::cli::run(args);
}
