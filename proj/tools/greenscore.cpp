#include "greenscore/cli.hpp"

int main(int argc, char** argv) { return greenscore::cli::run(argc, argv); }
