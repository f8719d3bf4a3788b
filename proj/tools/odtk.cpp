#include "odt/cli.hpp"

int main(int argc, char** argv) {
  return odt::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
