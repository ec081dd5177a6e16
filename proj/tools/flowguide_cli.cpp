#include "flowguide/cli.hpp"

int main(int argc, char** argv) { return flowguide::run_cli(argc, argv); }
