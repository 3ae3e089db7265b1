#include "mprlab/cli.hpp"

int main(int argc, char** argv) { return mprlab::cli::run_cli(argc, argv); }
