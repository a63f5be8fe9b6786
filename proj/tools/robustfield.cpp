#include "robustfield/cli.hpp"

int main(int argc, char** argv) { return robustfield::run_cli(argc, argv); }
