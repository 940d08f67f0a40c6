#include <iostream>

#include "maskedkrum/cli.hpp"

int main(int argc, char** argv) {
  return maskedkrum::cli::run(argc, argv, std::cout, std::cerr);
}
