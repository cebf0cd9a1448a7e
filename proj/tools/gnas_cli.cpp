#include <csignal>

#include "gnas/cli.hpp"

namespace {

extern "C" void on_interrupt(int) { gnas::cli::interrupt_flag().store(true); }

}  // namespace

int main(int argc, char** argv) {
    std::signal(SIGINT, on_interrupt);
    std::signal(SIGTERM, on_interrupt);
    return gnas::cli::main(argc, argv);
}
