#include "experiment.hpp"

int main(int argc, char** argv) { return gcalc::cli::run_cli(argc, argv); }
