#include <iostream>

#include "unmask_commands.hpp"

int main(int argc, char** argv) { return unmask::cli::main(argc, argv, std::cout, std::cerr); }
