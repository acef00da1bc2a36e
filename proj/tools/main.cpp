#include "commands.hpp"

int main(int argc, char** argv) { return lebm::cli::run(argc, argv); }
