#include <iostream>

#include "safemc/cli.hpp"

int main(int argc, char** argv) {
    return safemc::run_cli(argc, argv, std::cout, std::cerr);
}
