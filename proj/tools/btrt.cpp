#include "btrt/cli.hpp"

int main(int argc, char** argv) { return btrt::run_cli(argc, argv); }
