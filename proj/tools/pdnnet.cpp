#include "pdnnet/cli.hpp"

int main(int argc, char** argv) { return pdn::cli::run(argc, argv); }
