#include "mbsde/app.hpp"

int main(int argc, char** argv) { return mbsde::cli_main(argc, argv); }
