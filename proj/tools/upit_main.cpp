#include "upit/cli.hpp"

int main(int argc, char** argv) { return upit::cli::run(argc, argv); }
