#include "nanolens/cli.hpp"

int main(int argc, char** argv) { return nanolens::cli::run_cli(argc, argv); }
