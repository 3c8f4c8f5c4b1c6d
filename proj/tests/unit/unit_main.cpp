#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>
#include <torch/torch.h>

#include "vidswap/log.hpp"

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  vidswap::set_log_sink([](const std::string&) {});
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
