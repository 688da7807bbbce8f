#include "relaylab/cli.hpp"

int main(int argc, char** argv) { return relaylab::run_cli(argc, argv); }
