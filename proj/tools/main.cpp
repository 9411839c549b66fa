#include "pmk/cli.hpp"

int main(int argc, char** argv) { return pmk::cli::run(argc, argv); }
