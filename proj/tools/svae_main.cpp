#include <iostream>

#include "svae/cli/commands.hpp"

int main(int argc, char** argv) { return svae::cli::run_cli(argc, argv, std::cout, std::cerr); }
