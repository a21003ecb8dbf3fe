#include "ganimc/cli.hpp"

int main(int argc, char** argv) { return ganimc::cli::run(argc, argv); }
