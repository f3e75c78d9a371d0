#include <iostream>

#include "lrcn/cli.hpp"

int main(int argc, char** argv) { return lrcn::cli_main(argc, argv, std::cout, std::cerr); }
