#include "igpn/cli.hpp"
#include "igpn/train.hpp"

int main(int argc, char** argv) {
  igpn::tune_allocator();
  return igpn::cli::run(argc, argv);
}
