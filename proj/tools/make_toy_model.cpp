// Writes the bundled desk-scale body model to a JSON model file.

#include <iostream>

#include "flowpose/body_model.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_toy_model OUT.json\n";
    return 2;
  }
  try {
    flowpose::save_model(flowpose::make_toy_model(), argv[1]);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
