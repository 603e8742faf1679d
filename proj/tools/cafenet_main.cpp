#include "cafenet/cli.hpp"

int main(int argc, char** argv) { return cafenet::cli::run_cli(argc, argv); }
