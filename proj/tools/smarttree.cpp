#include "smarttree/cli.hpp"

int main(int argc, char** argv) { return smarttree::cli::run(argc, argv); }
