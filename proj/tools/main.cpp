#include <iostream>

#include "rulegen/cli.hpp"

int main(int argc, char** argv) { return rulegen::run_cli(argc, argv, std::cout, std::cerr); }
