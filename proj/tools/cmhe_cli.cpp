#include <string>
#include <vector>

#include "cmhe/cli.hpp"

int main(int argc, char** argv) {
  return cmhe::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
