#include "cli.hpp"

int main(int argc, char** argv) { return occlunet::cli::dispatch(argc, argv); }
