#include "mstim/cli.hpp"

int main(int argc, char** argv) { return mstim::cli::run(argc, argv); }
