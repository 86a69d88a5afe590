#include <malloc.h>

#include <iostream>
#include <string>
#include <vector>

#include "flexcast/cli.hpp"

int main(int argc, char** argv) {
    // Activations are large and short-lived; keep them on the heap instead of
    // paying for a fresh mapping on every allocation.
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    std::vector<std::string> args(argv + 1, argv + argc);
    return flexcast::cli::run(args, std::cout, std::cerr);
}
