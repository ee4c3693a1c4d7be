// Amalgamated Catch2 compiled once and shared by the test binaries.
#include <catch2/catch_amalgamated.cpp>
