#include "mild/cli.hpp"

int main(int argc, char** argv) { return mild::run_cli(argc, argv); }
