#include "nodpred/cli.hpp"

int main(int argc, char** argv) { return nodpred::run_cli(argc, argv); }
