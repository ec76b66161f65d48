#include "skipt/cli.hpp"

int main(int argc, char** argv) { return skipt::cli::run(argc, argv); }
