#include <iostream>

#include "bayesformer/cli.hpp"

int main(int argc, char** argv) { return bayesformer::run_cli(argc, argv, std::cout, std::cerr); }
