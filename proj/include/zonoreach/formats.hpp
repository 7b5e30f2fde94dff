#ifndef ZONOREACH_FORMATS_HPP
#define ZONOREACH_FORMATS_HPP

#include <filesystem>
#include <optional>
#include <string>

#include "zonoreach/network.hpp"

namespace zonoreach
{

/// NNet text format. With `fold_normalization` the input and output scaling
/// is folded into the first and last affine layers, so the graph works in
/// raw units; otherwise it is kept in NetworkGraph::normalization.
NetworkGraph parse_nnet(const std::string& text, bool fold_normalization = true);

/// ONNX protobuf restricted to the supported operator set.
NetworkGraph parse_onnx(const std::string& bytes);

/// Versioned JSON graph ("format": "zonoreach-graph").
NetworkGraph parse_json_graph(const std::string& text);
std::string write_json_graph(const NetworkGraph& g);

enum class NetworkFormat
{
    nnet,
    onnx,
    json
};

std::optional<NetworkFormat> network_format_from_string(const std::string& name);

/// Reads a network; the format is taken from `format` or else the extension.
NetworkGraph load_network(const std::filesystem::path& path, std::optional<NetworkFormat> format = std::nullopt,
                          bool fold_normalization = true);

} // namespace zonoreach

#endif
