#include "ehrisk/cli.hpp"

#include <iostream>

int main(int argc, char **argv) {
    return ehrisk::dispatch(argc, argv, std::cout, std::cerr);
}
