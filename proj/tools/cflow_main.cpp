#include <iostream>

#include "cflow/cli.hpp"

int main(int argc, char** argv) { return cflow::run_cli(argc, argv, std::cout, std::cerr); }
