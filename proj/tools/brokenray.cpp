#include "brokenray/cli.hpp"

int main(int argc, char** argv) { return brokenray::cli::run(argc, argv); }
