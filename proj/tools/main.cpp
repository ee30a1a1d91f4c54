#include "cli.hpp"

int main(int argc, char** argv) { return mtd::cli::run_cli(argc, argv); }
