#include "cli.hpp"

int main(int argc, char** argv) { return rdkv::cli::run(argc, argv); }
