#include "metagrad/cli.hpp"

int main(int argc, char** argv) { return metagrad::cli_main(argc, argv); }
