#include <iostream>

#include "mim/cli.hpp"

int main(int argc, char** argv) { return mim::cli::run_cli(argc, argv, std::cout, std::cerr); }
