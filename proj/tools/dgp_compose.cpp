#include "dgp/cli.hpp"

int main(int argc, char** argv) { return dgp::run_cli(argc, argv); }
