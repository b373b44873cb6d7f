#include "dib/cli.hpp"

int main(int argc, char** argv) { return dib::cli::run(argc, argv); }
