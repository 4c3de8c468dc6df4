#include <iostream>

#include "actionset/cli.hpp"

int main(int argc, char** argv) {
  return actionset::dispatch(argc, argv, std::cout, std::cerr);
}
