#include "pir/cli.hpp"

int main(int argc, char** argv) { return pir::cli::run(argc, argv); }
