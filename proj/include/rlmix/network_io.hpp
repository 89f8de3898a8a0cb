#pragma once

#include "rlmix/network.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

namespace rlmix {

// Text network format, comma separated, LF line endings:
//
//   <node count>,<arc count>
//   <id>,<x>,<y>,<plain|control>                         one line per node
//   <tail>,<head>,<length_m>,<speed_min>,<speed_max>,<residential|non_residential>
//
// Coordinates may be left empty. Numbers are written in shortest round-trip
// form, so saving a loaded canonical file reproduces it byte for byte.

void write_network(std::ostream& os, const Network& network);
Network read_network(std::istream& is, NetworkOptions opts = {});

void save_network(const std::filesystem::path& path, const Network& network);
Network load_network(const std::filesystem::path& path, NetworkOptions opts = {});

// Arc-indexed travel time table: header "arc,tail,head,minutes" then one row
// per arc in the network's arc order.
void write_travel_times(std::ostream& os, const Network& network, const Eigen::VectorXd& times);
Eigen::VectorXd read_travel_times(std::istream& is, const Network& network);
void save_travel_times(const std::filesystem::path& path, const Network& network,
                       const Eigen::VectorXd& times);
Eigen::VectorXd load_travel_times(const std::filesystem::path& path, const Network& network);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
/// Strict parse of a whole field; throws InvalidInput naming `what`.
double parse_double(std::string_view text, std::string_view what);
Index parse_index(std::string_view text, std::string_view what);

}  // namespace rlmix
