#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return bicoord::cli::run(argc, argv, std::cout, std::cerr); }
