#include "cli_app.hpp"

int main(int argc, char** argv) { return xqreid::cli::run(argc, argv); }
