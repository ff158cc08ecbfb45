#include <iostream>

#include "pica/cli.hpp"

int main(int argc, char** argv) { return pica::cli::run(argc, argv, {std::cout, std::cerr, std::cin}); }
