#ifndef ZONOREACH_NETWORK_HPP
#define ZONOREACH_NETWORK_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/interval.hpp"
#include "zonoreach/zonotope.hpp"

namespace zonoreach
{

enum class LayerKind
{
    input,
    affine,
    conv2d,
    relu,
    sigmoid,
    tanh,
    maxpool,
    add,
    matmul,
    bias_add,
    flatten,
    reshape,
    transpose,
    concat,
    softmax,
    cast,
    floor,
    ceil,
    constant
};

std::string to_string(LayerKind kind);
std::optional<LayerKind> layer_kind_from_string(const std::string& name);

struct Conv2DParams
{
    std::size_t out_channels = 0;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t dilation_h = 1;
    std::size_t dilation_w = 1;
    // top, left, bottom, right
    std::size_t pads[4] = {0, 0, 0, 0};
    /// Kernel in (out_channel, in_channel, kh, kw) row-major order.
    Eigen::VectorXd kernel;
};

struct PoolParams
{
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pads[4] = {0, 0, 0, 0};
};

/// One node of the graph. Tensors are row-major with the batch axis removed;
/// convolutions and pools see (C, H, W).
struct Layer
{
    std::string name;
    LayerKind kind = LayerKind::input;
    std::vector<std::size_t> inputs;
    /// Output shape, filled in by NetworkGraph::add.
    Shape shape;

    /// affine: (out x in) on the flattened input. matmul: (m x n) applied
    /// along the last axis.
    Eigen::MatrixXd weights;
    /// affine/bias_add bias; constant value.
    Eigen::VectorXd bias;
    Conv2DParams conv;
    PoolParams pool;
    std::vector<std::size_t> perm;
    std::size_t axis = 0;
    /// reshape target; constant shape.
    Shape target;
    CastMode cast_mode = CastMode::round;
};

/// NNet input/output normalization, kept when it is not folded into the weights.
struct Normalization
{
    Eigen::VectorXd input_min;
    Eigen::VectorXd input_max;
    Eigen::VectorXd input_mean;
    Eigen::VectorXd input_range;
    double output_mean = 0.0;
    double output_range = 1.0;
};

/// DAG of layers in topological order. Node 0 is the input.
class NetworkGraph
{
public:
    explicit NetworkGraph(Shape input_shape = {}, std::string input_name = "input");

    /// Validates the layer against its inputs, infers its output shape and
    /// appends it. Returns the node index. The last added node becomes the
    /// output. Unary layers without inputs read the current output.
    std::size_t add(Layer layer);

    const std::vector<Layer>& layers() const { return layers_; }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }
    std::size_t size() const { return layers_.size(); }
    std::size_t output() const { return output_; }
    void set_output(std::size_t node);
    const Shape& input_shape() const { return layers_.front().shape; }
    const Shape& output_shape() const { return layers_.at(output_).shape; }
    std::size_t input_size() const { return shape_size(input_shape()); }
    std::size_t output_size() const { return shape_size(output_shape()); }
    std::optional<std::size_t> find(const std::string& name) const;
    std::vector<std::size_t> consumers(std::size_t node) const;

    /// Nodes the output depends on.
    std::vector<bool> live() const;

    std::optional<Normalization> normalization;

    /// Concrete double-precision inference.
    Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const;
    std::vector<Eigen::VectorXd> evaluate_all(const Eigen::VectorXd& x) const;

private:
    std::vector<Layer> layers_;
    std::size_t output_ = 0;
};

/// Dense (W, b) of a linear layer on its flattened input: affine, conv2d,
/// matmul, bias_add, flatten, reshape, transpose.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> linear_map(const Layer& layer, const Shape& input_shape);
bool is_linear(LayerKind kind);

/// For transpose and concat: the source of each output element as
/// (input position in layer.inputs, flat index).
std::vector<std::pair<std::size_t, std::size_t>> gather_map(const Layer& layer,
                                                            const std::vector<Shape>& input_shapes);

/// Input window of each maxpool output element (padding excluded).
std::vector<std::vector<std::size_t>> pool_windows(const PoolParams& pool, const Shape& input_shape);

Eigen::VectorXd evaluate_layer(const Layer& layer, const std::vector<const Eigen::VectorXd*>& inputs,
                               const std::vector<Shape>& input_shapes);

} // namespace zonoreach

#endif
