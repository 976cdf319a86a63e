#include "wavesim/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return wavesim::run_cli(argc, argv, std::cout, std::cerr); }
