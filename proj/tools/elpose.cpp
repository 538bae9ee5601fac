#include "elpose/cli.hpp"

int main(int argc, char** argv) { return elpose::cli::run_main(argc, argv); }
