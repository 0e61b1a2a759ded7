#include "tacoforge/cli.hpp"

int main(int argc, char** argv) { return tacoforge::run_cli(argc, argv); }
