#include "patchedit/cli.hpp"

int main(int argc, char** argv) { return patchedit::run_cli(argc, argv); }
