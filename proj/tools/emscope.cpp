#include "emscope/cli.hpp"

#include <string>
#include <vector>

int main(int argc, char** argv) {
  return emscope::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
