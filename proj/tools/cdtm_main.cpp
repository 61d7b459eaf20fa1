#include <iostream>

#include "cdtm/cli.hpp"

int main(int argc, char** argv) { return cdtm::run_cli(argc, argv, std::cout, std::cerr); }
