#include <iostream>

#include "telecg/cli.hpp"

int main(int argc, char** argv) { return telecg::cli::run(argc, argv, std::cout); }
