#include "eqssl/cli.hpp"

int main(int argc, char** argv) { return eqssl::run_cli(argc, argv); }
