#include <iostream>

#include "spinmem/cli.hpp"

int main(int argc, char** argv) { return spinmem::cli::run(argc, argv, std::cout, std::cerr); }
