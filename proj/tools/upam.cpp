#include "upam/cli/app.hpp"

int main(int argc, char** argv) { return upam::cli::run(argc, argv); }
