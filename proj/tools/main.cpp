#include "nowdiff/cli.hpp"

int main(int argc, char** argv) { return nowdiff::cli::run(argc, argv); }
