#include <iostream>

#include "apt/cli.hpp"

int main(int argc, char** argv) { return apt::cli::dispatch(argc, argv, std::cout, std::cerr); }
