#include <iostream>

#include "pdv/cli.hpp"

int main(int argc, char** argv) { return pdv::run_cli(argc, argv, std::cout, std::cerr); }
