#include <string>
#include <vector>

#include "kfcn/experiment.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return kfcn::exp::run_cli(args);
}
