#include <csignal>
#include <iostream>

#include "commands.hpp"

namespace {

extern "C" void on_interrupt(int) {
  slicefinder::cli::cancel_flag().store(true);
}

}  // namespace

int main(int argc, char **argv) {
  std::signal(SIGINT, on_interrupt);
  std::signal(SIGTERM, on_interrupt);
  return slicefinder::cli::run(argc, argv, std::cout, std::cerr);
}
