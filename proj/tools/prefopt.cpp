#include "prefopt/cli.hpp"

int main(int argc, char** argv) { return prefopt::run_cli(argc, argv); }
