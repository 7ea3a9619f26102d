// Entry point for the mfcontrol command-line tool.

#include "mfcontrol/cli.hpp"

int main(int argc, char** argv) { return mfc::run_cli(argc, argv); }
