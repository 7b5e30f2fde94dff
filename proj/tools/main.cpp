#include "zonoreach/cli.hpp"

int main(int argc, char** argv)
{
    return zonoreach::cli::run(argc, argv);
}
