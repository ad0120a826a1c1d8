#include "urbandit/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return urbandit::run_cli(argc, argv, std::cout, std::cerr); }
