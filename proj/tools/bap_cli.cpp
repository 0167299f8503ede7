#include "commands.hpp"

int main(int argc, char** argv) { return bap::cli::run(argc, argv); }
