#include "quictun/cli/cli.hpp"

int main(int argc, char** argv)
{
    return quictun::cli::main(argc, argv);
}
