#include "opelab/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return opelab::run_cli(argc, argv, std::cout, std::cerr); }
