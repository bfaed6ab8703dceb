#include "diffgnss/cli.hpp"

int main(int argc, char** argv) { return diffgnss::cli::main(argc, argv); }
