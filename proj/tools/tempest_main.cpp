#include <iostream>

#include "tempest/cli.hpp"

int main(int argc, char** argv) { return tempest::cli::run(argc, argv, std::cout, std::cerr); }
