#ifndef ZONOREACH_REWRITE_HPP
#define ZONOREACH_REWRITE_HPP

#include <utility>

#include "zonoreach/network.hpp"
#include "zonoreach/property.hpp"

namespace zonoreach
{

/// Copy of the graph without nodes the output does not depend on.
NetworkGraph prune(const NetworkGraph& g);

/// Fuses matmul/affine + bias into affine, removes inverse transposes and
/// redundant reshapes, until nothing changes. A trailing softmax is dropped
/// only when `property` is given and only compares outputs pairwise.
NetworkGraph simplify(const NetworkGraph& g, const NormalizedProperty* property = nullptr);

/// Replaces every maxpool by a balanced tree of max(a, b) = relu(a - b) + b stages.
NetworkGraph rewrite_maxpool(const NetworkGraph& g);

/// Adds a final affine layer z = C y (or C [y; x] when atoms mention inputs)
/// with one row per distinct atom, and rewrites the property over z.
std::pair<NetworkGraph, NormalizedProperty> append_property_layer(const NetworkGraph& g,
                                                                  const NormalizedProperty& p);

} // namespace zonoreach

#endif
