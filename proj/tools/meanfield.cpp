#include "chiplet/cli.hpp"

int main(int argc, char** argv) { return chiplet::run_cli(argc, argv); }
