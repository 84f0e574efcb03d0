#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "debm/kernels.hpp"
#include "debm/tensor.hpp"

namespace debm {

// A Program is an immutable DAG of primitive tensor operations with named
// input leaves and named outputs. Shapes are fixed at build time; every
// primitive has an exact adjoint, so scalar outputs can be differentiated
// with respect to any set of inputs by one reverse sweep.

enum class OpKind : uint8_t {
    Input,
    Dense,
    Conv2d,
    ConvTranspose2d,
    Add,
    Mul,
    LeakyRelu,
    Silu,
    Scale,
    Sum,
    Mse,
    ConcatChannels,
    BroadcastChannel,
    Reshape,
};

const char* op_name(OpKind k);

struct Node {
    OpKind kind = OpKind::Input;
    int a = -1, b = -1, c = -1;  // operand node ids
    Shape shape;
    kernels::Conv2dGeom conv;  // Conv2d / ConvTranspose2d
    float alpha = 0.0f;        // LeakyRelu slope
    float cscale = 1.0f;       // Scale constant
    std::string name;          // Input
};

class Program {
public:
    int num_nodes() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    const std::vector<int>& input_ids() const { return inputs_; }
    int input_id(std::string_view name) const;  // throws ShapeError if unknown
    bool has_input(std::string_view name) const;

    const std::vector<std::pair<std::string, int>>& outputs() const { return outputs_; }
    int output_id(std::string_view name) const;
    int sole_output_id() const;  // requires exactly one output

private:
    friend class ProgramBuilder;
    std::vector<Node> nodes_;
    std::vector<int> inputs_;
    std::unordered_map<std::string, int> input_by_name_;
    std::vector<std::pair<std::string, int>> outputs_;
    std::unordered_map<std::string, int> output_by_name_;
};

enum class Padding { Same, Valid };

class ProgramBuilder {
public:
    int input(std::string name, Shape shape);
    int dense(int x, int w, int b);
    int conv2d(int x, int k, int b, int stride, Padding pad);
    // Transposed convolution: the adjoint map of conv2d(out -> in). Output
    // spatial size must be given since stride-2 adjoints are ambiguous.
    int conv2d_transpose(int x, int k, int b, int stride, Padding pad, int out_h, int out_w);
    int add(int a, int b);
    int mul(int a, int b);
    int leaky_relu(int x, float alpha);
    int silu(int x);
    int scale(int x, float c);
    int sum(int x);
    int mse(int a, int b);
    int concat_channels(int a, int b);
    int broadcast_channel(int s, int h, int w);
    int reshape(int x, Shape shape);

    const Shape& shape_of(int id) const;
    void mark_output(std::string name, int id);
    std::shared_ptr<const Program> build();

private:
    int push(Node n);
    void check_id(int id, const char* what) const;
    Program prog_;
    bool built_ = false;
};

// Per-evaluation buffers for one Program. Reusable across calls; values and
// gradients live per node. Evaluations are pure given (program, inputs).
class Workspace {
public:
    explicit Workspace(std::shared_ptr<const Program> p);

    // Copies each named tensor into its input slot and runs the forward pass.
    void forward(const std::map<std::string, Tensor>& inputs);
    // Hot path: write input slots directly (shape-checked), then run().
    void set_input(int input_node, const Tensor& value);
    void run();

    const Tensor& value(int node) const { return vals_[static_cast<size_t>(node)]; }
    const Tensor& output(std::string_view name) const;
    double scalar_output(std::string_view name) const;

    // Reverse sweep from a scalar output; returns gradients aligned with
    // `wrt` (names of input leaves). May be called repeatedly after one
    // forward, with different outputs or wrt sets.
    std::vector<Tensor> backward(int output_node, const std::vector<int>& wrt_inputs);
    std::vector<Tensor> backward(std::string_view output, const std::vector<std::string>& wrt);

    const Program& program() const { return *prog_; }

private:
    void adjoint(int id);
    std::shared_ptr<const Program> owner_;
    const Program* prog_;
    std::vector<Tensor> vals_;
    std::vector<Tensor> grads_;
    std::vector<uint8_t> live_;     // nodes needed in the current backward
    std::vector<uint8_t> has_val_;  // inputs that were set before run()
};

// Convenience wrappers (the spec-facing entry points).

struct ValueGrad {
    double value = 0.0;
    std::map<std::string, Tensor> grads;
};

// Forward evaluation of all outputs.
std::map<std::string, Tensor> forward(const Program& p, const std::map<std::string, Tensor>& inputs);
std::map<std::string, Tensor> forward(const std::shared_ptr<const Program>& p,
                                      const std::map<std::string, Tensor>& inputs);

// Value and exact reverse-mode gradients of a scalar output w.r.t. the named
// inputs. `output` may be empty when the program has exactly one output.
ValueGrad value_and_grad(const std::shared_ptr<const Program>& p, const std::map<std::string, Tensor>& at,
                         const std::vector<std::string>& wrt, std::string_view output = {});

// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
std::map<std::string, Tensor> finite_diff(const std::shared_ptr<const Program>& p,
                                          const std::map<std::string, Tensor>& at,
                                          const std::vector<std::string>& wrt, double h,
                                          std::string_view output = {});

}  // namespace debm
