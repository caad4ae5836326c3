#include "cli.hpp"

int main(int argc, char** argv) { return fedwarm::cli::run_main(argc, argv); }
