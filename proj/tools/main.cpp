#include "moment_glioma/scenarios.hpp"

#include <iostream>

int main(int argc, char** argv) { return moment_glioma::cli_main(argc, argv, std::cout, std::cerr); }
