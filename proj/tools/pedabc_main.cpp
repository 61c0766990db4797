#include "pedabc/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return pedabc::cli::run(argc, argv, std::cout, std::cerr); }
