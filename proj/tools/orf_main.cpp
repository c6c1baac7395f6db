#include <iostream>
#include <string>
#include <vector>

#include "orf/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return orf::cli::run(args, std::cout, std::cerr);
}
