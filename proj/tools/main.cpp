#include "slidenet_cli.hpp"

int main(int argc, char** argv) { return slidenet::cli::run(argc, argv); }
