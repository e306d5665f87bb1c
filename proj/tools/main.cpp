#include <iostream>

#include "cdgpa/cli.hpp"

int main(int argc, char** argv) { return cdgpa::run_cli(argc, argv, std::cout, std::cerr); }
