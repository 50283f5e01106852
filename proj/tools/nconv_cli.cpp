#include "nconv/cli.hpp"

int main(int argc, char** argv) { return nconv::cli::run(argc, argv); }
