#include <iostream>
#include <string>
#include <vector>

#include "labelembed/cli.hpp"

int main(int argc, char** argv) {
  return labelembed::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
