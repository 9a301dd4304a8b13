#include "mecch/cli.hpp"

int main(int argc, char** argv) { return mecch::run_cli(argc, argv); }
