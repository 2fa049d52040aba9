#include "slidemask/cli.hpp"

int main(int argc, char** argv) { return slidemask::run_command(argc, argv); }
