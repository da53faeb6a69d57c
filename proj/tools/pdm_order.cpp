#include <string>
#include <vector>

#include "pdmorder/cli.hpp"

int main(int argc, char** argv) {
  return pdmorder::cli::dispatch(std::vector<std::string>(argv, argv + argc));
}
