#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "ivs/runtime.hpp"

int main(int argc, char** argv) {
  ivs::tune_allocator();
  return doctest::Context(argc, argv).run();
}
