#include "fbn/cli.hpp"

int main(int argc, char** argv) { return fbn::cli::run(argc, argv); }
