#include <iostream>

#include "credtx/cli.hpp"

int main(int argc, char** argv) { return credtx::run(argc, argv, std::cout, std::cerr); }
