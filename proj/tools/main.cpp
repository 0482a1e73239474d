#include <iostream>

#include "vision/cli.hpp"

int main(int argc, char** argv) {
  return vision::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
