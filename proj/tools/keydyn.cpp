#include "keydyn/cli.hpp"

int main(int argc, char** argv) { return keydyn::cli_main(argc, argv); }
