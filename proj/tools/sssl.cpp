#include "sssl/cli.hpp"

int main(int argc, char** argv) { return sssl::run_cli(argc, argv); }
