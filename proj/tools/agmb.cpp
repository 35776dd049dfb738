#include "cli.hpp"

int main(int argc, char** argv) { return agmb::cli::run(argc, argv); }
