#include "pjat/cli.hpp"

int main(int argc, char** argv) { return pjat::run_cli(argc, argv); }
