#include "kbvqa/cli.hpp"

int main(int argc, char** argv) { return kbvqa::cli::run_cli(argc, argv); }
