#include "rnr/cli.hpp"

int main(int argc, char** argv) { return rnr::run_cli(argc, argv); }
