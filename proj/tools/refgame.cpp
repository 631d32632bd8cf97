#include "refgame/cli.hpp"

int main(int argc, char** argv) { return refgame::run_cli(argc, argv); }
