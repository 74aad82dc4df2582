#include "riemann/experiment.hpp"

#include <iostream>

int main(int argc, char** argv) { return riemann::cli::run_cli(argc, argv, std::cout, std::cerr); }
