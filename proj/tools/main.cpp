#include "causerec/platform.hpp"
#include "cli.hpp"

int main(int argc, char** argv) {
  causerec::tune_allocator();
  return causerec::cli::run(argc, argv);
}
