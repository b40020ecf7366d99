#include "commands.hpp"

int main(int argc, char** argv) { return udiffse::cli::run(argc, argv); }
