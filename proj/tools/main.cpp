#include <iostream>

#include "uvq/cli.hpp"

int main(int argc, char** argv) { return uvq::run_cli(argc, argv, std::cout, std::cerr); }
