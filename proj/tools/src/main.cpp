#include "commands.hpp"

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return deepdgl::cli::run_command(args, std::cout, std::cerr, std::getenv("DEEPDGL_SEED"));
}
