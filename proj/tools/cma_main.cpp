#include "cma/cli.hpp"
int main(int argc, char** argv) { return cma::run_cli(argc, argv); }
