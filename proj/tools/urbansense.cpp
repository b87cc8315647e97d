#include <iostream>

#include "urbansense/cli.hpp"

int main(int argc, char** argv) {
    return urbansense::app::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
