#include "pagent/cli.hpp"

int main(int argc, char** argv) {
    return pagent::cli::cli_main(argc, argv);
}
