#include "placekit/cli.hpp"

#include <string>
#include <vector>

int main(int argc, char **argv) {
  return placekit::run_cli(std::vector<std::string>(argv, argv + argc));
}
