#include <iostream>
#include <vector>

#include "velsplat/cli.hpp"

int main(int argc, char** argv) {
    return velsplat::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout,
                                 std::cerr);
}
