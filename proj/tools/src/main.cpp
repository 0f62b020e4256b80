#include <iostream>

#include "terrasafe_cli/cli.hpp"

int main(int argc, char** argv) { return terrasafe::cli::run(argc, argv, std::cout, std::cerr); }
