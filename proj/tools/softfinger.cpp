#include <atomic>
#include <csignal>
#include <iostream>

#include "softfinger/cli.hpp"

namespace {

std::atomic<bool> g_stop{false};
static_assert(std::atomic<bool>::is_always_lock_free);

extern "C" void on_signal(int) { g_stop.store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  return softfinger::cli::run_cli(argc, argv, std::cout, std::cerr, &g_stop);
}
