#include "flowpose/cli.hpp"

int main(int argc, char** argv) { return flowpose::run(std::vector<std::string>(argv, argv + argc)); }
