#include "debm/program.hpp"

#include <algorithm>
#include <cmath>

namespace debm {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Input: return "input";
        case OpKind::Dense: return "dense";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::ConvTranspose2d: return "conv2d_transpose";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::LeakyRelu: return "leaky_relu";
        case OpKind::Silu: return "silu";
        case OpKind::Scale: return "scale";
        case OpKind::Sum: return "sum";
        case OpKind::Mse: return "mse";
        case OpKind::ConcatChannels: return "concat_channels";
        case OpKind::BroadcastChannel: return "broadcast_channel";
        case OpKind::Reshape: return "reshape";
    }
    return "?";
}

namespace {
[[noreturn]] void op_error(OpKind k, int id, const std::string& msg) {
    throw ShapeError(std::string(op_name(k)) + " (node " + std::to_string(id) + "): " + msg);
}
}  // namespace

int Program::input_id(std::string_view name) const {
    auto it = input_by_name_.find(std::string(name));
    if (it == input_by_name_.end()) throw ShapeError("program has no input named '" + std::string(name) + "'");
    return it->second;
}

bool Program::has_input(std::string_view name) const {
    return input_by_name_.count(std::string(name)) != 0;
}

int Program::output_id(std::string_view name) const {
    auto it = output_by_name_.find(std::string(name));
    if (it == output_by_name_.end()) throw ShapeError("program has no output named '" + std::string(name) + "'");
    return it->second;
}

int Program::sole_output_id() const {
    if (outputs_.size() != 1)
        throw ShapeError("program has " + std::to_string(outputs_.size()) + " outputs; name one explicitly");
    return outputs_[0].second;
}

// ---- builder ----

int ProgramBuilder::push(Node n) {
    prog_.nodes_.push_back(std::move(n));
    return static_cast<int>(prog_.nodes_.size()) - 1;
}

void ProgramBuilder::check_id(int id, const char* what) const {
    if (id < 0 || id >= static_cast<int>(prog_.nodes_.size()))
        throw ShapeError(std::string(what) + ": operand id " + std::to_string(id) + " out of range");
}

const Shape& ProgramBuilder::shape_of(int id) const {
    check_id(id, "shape_of");
    return prog_.nodes_[static_cast<size_t>(id)].shape;
}

int ProgramBuilder::input(std::string name, Shape shape) {
    if (!shape_valid(shape)) throw ShapeError("input '" + name + "': invalid shape " + shape_str(shape));
    if (prog_.input_by_name_.count(name)) throw ShapeError("duplicate input name '" + name + "'");
    Node n;
    n.kind = OpKind::Input;
    n.shape = std::move(shape);
    n.name = name;
    int id = push(std::move(n));
    prog_.inputs_.push_back(id);
    prog_.input_by_name_.emplace(std::move(name), id);
    return id;
}

int ProgramBuilder::dense(int x, int w, int b) {
    check_id(x, "dense");
    check_id(w, "dense");
    check_id(b, "dense");
    const Shape& xs = shape_of(x);
    const Shape& ws = shape_of(w);
    const Shape& bs = shape_of(b);
    int id = static_cast<int>(prog_.nodes_.size());
    if (xs.size() != 1) op_error(OpKind::Dense, id, "input must be rank 1, got " + shape_str(xs));
    if (ws.size() != 2 || ws[1] != xs[0])
        op_error(OpKind::Dense, id, "weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
    if (bs.size() != 1 || bs[0] != ws[0])
        op_error(OpKind::Dense, id, "bias " + shape_str(bs) + " incompatible with weight " + shape_str(ws));
    Node n;
    n.kind = OpKind::Dense;
    n.a = x;
    n.b = w;
    n.c = b;
    n.shape = {ws[0]};
    return push(std::move(n));
}

int ProgramBuilder::conv2d(int x, int k, int b, int stride, Padding pad) {
    check_id(x, "conv2d");
    check_id(k, "conv2d");
    check_id(b, "conv2d");
    const Shape& xs = shape_of(x);
    const Shape& ks = shape_of(k);
    const Shape& bs = shape_of(b);
    int id = static_cast<int>(prog_.nodes_.size());
    if (xs.size() != 3) op_error(OpKind::Conv2d, id, "input must be [c,h,w], got " + shape_str(xs));
    if (ks.size() != 4 || ks[1] != xs[0])
        op_error(OpKind::Conv2d, id, "kernel " + shape_str(ks) + " incompatible with input " + shape_str(xs));
    if (bs.size() != 1 || bs[0] != ks[0])
        op_error(OpKind::Conv2d, id, "bias " + shape_str(bs) + " incompatible with kernel " + shape_str(ks));
    Node n;
    n.kind = OpKind::Conv2d;
    n.a = x;
    n.b = k;
    n.c = b;
    n.conv = kernels::make_conv_geom(xs[0], xs[1], xs[2], ks[0], ks[2], ks[3], stride, pad == Padding::Same);
    n.shape = {n.conv.cout, n.conv.hout, n.conv.wout};
    return push(std::move(n));
}

int ProgramBuilder::conv2d_transpose(int x, int k, int b, int stride, Padding pad, int out_h, int out_w) {
    check_id(x, "conv2d_transpose");
    check_id(k, "conv2d_transpose");
    check_id(b, "conv2d_transpose");
    const Shape& xs = shape_of(x);
    const Shape& ks = shape_of(k);
    const Shape& bs = shape_of(b);
    int id = static_cast<int>(prog_.nodes_.size());
    if (xs.size() != 3) op_error(OpKind::ConvTranspose2d, id, "input must be [c,h,w], got " + shape_str(xs));
    // kernel layout [c_in, c_out, kh, kw], the adjoint of a conv with the
    // same kernel mapping [c_out, out_h, out_w] -> [c_in, hx, wx]
    if (ks.size() != 4 || ks[0] != xs[0])
        op_error(OpKind::ConvTranspose2d, id,
                 "kernel " + shape_str(ks) + " incompatible with input " + shape_str(xs));
    if (bs.size() != 1 || bs[0] != ks[1])
        op_error(OpKind::ConvTranspose2d, id, "bias " + shape_str(bs) + " incompatible with kernel " + shape_str(ks));
    Node n;
    n.kind = OpKind::ConvTranspose2d;
    n.a = x;
    n.b = k;
    n.c = b;
    n.conv = kernels::make_conv_geom(ks[1], out_h, out_w, ks[0], ks[2], ks[3], stride, pad == Padding::Same);
    if (n.conv.hout != xs[1] || n.conv.wout != xs[2])
        op_error(OpKind::ConvTranspose2d, id,
                 "requested output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " maps to input " + std::to_string(n.conv.hout) + "x" + std::to_string(n.conv.wout) +
                     ", got " + shape_str(xs));
    n.shape = {ks[1], out_h, out_w};
    return push(std::move(n));
}

int ProgramBuilder::add(int a, int b) {
    check_id(a, "add");
    check_id(b, "add");
    int id = static_cast<int>(prog_.nodes_.size());
    if (shape_of(a) != shape_of(b))
        op_error(OpKind::Add, id, shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
    Node n;
    n.kind = OpKind::Add;
    n.a = a;
    n.b = b;
    n.shape = shape_of(a);
    return push(std::move(n));
}

int ProgramBuilder::mul(int a, int b) {
    check_id(a, "mul");
    check_id(b, "mul");
    int id = static_cast<int>(prog_.nodes_.size());
    if (shape_of(a) != shape_of(b))
        op_error(OpKind::Mul, id, shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
    Node n;
    n.kind = OpKind::Mul;
    n.a = a;
    n.b = b;
    n.shape = shape_of(a);
    return push(std::move(n));
}

int ProgramBuilder::leaky_relu(int x, float alpha) {
    check_id(x, "leaky_relu");
    Node n;
    n.kind = OpKind::LeakyRelu;
    n.a = x;
    n.alpha = alpha;
    n.shape = shape_of(x);
    return push(std::move(n));
}

int ProgramBuilder::silu(int x) {
    check_id(x, "silu");
    Node n;
    n.kind = OpKind::Silu;
    n.a = x;
    n.shape = shape_of(x);
    return push(std::move(n));
}

int ProgramBuilder::scale(int x, float c) {
    check_id(x, "scale");
    Node n;
    n.kind = OpKind::Scale;
    n.a = x;
    n.cscale = c;
    n.shape = shape_of(x);
    return push(std::move(n));
}

int ProgramBuilder::sum(int x) {
    check_id(x, "sum");
    Node n;
    n.kind = OpKind::Sum;
    n.a = x;
    n.shape = {};
    return push(std::move(n));
}

int ProgramBuilder::mse(int a, int b) {
    check_id(a, "mse");
    check_id(b, "mse");
    int id = static_cast<int>(prog_.nodes_.size());
    if (shape_of(a) != shape_of(b))
        op_error(OpKind::Mse, id, shape_str(shape_of(a)) + " vs " + shape_str(shape_of(b)));
    Node n;
    n.kind = OpKind::Mse;
    n.a = a;
    n.b = b;
    n.shape = {};
    return push(std::move(n));
}

int ProgramBuilder::concat_channels(int a, int b) {
    check_id(a, "concat_channels");
    check_id(b, "concat_channels");
    const Shape& as = shape_of(a);
    const Shape& bs = shape_of(b);
    int id = static_cast<int>(prog_.nodes_.size());
    if (as.size() != bs.size()) op_error(OpKind::ConcatChannels, id, shape_str(as) + " vs " + shape_str(bs));
    Node n;
    n.kind = OpKind::ConcatChannels;
    n.a = a;
    n.b = b;
    if (as.size() == 1) {
        n.shape = {as[0] + bs[0]};
    } else if (as.size() == 3) {
        if (as[1] != bs[1] || as[2] != bs[2])
            op_error(OpKind::ConcatChannels, id, "spatial mismatch " + shape_str(as) + " vs " + shape_str(bs));
        n.shape = {as[0] + bs[0], as[1], as[2]};
    } else {
        op_error(OpKind::ConcatChannels, id, "supports rank 1 or 3, got " + shape_str(as));
    }
    return push(std::move(n));
}

int ProgramBuilder::broadcast_channel(int s, int h, int w) {
    check_id(s, "broadcast_channel");
    const Shape& ss = shape_of(s);
    int id = static_cast<int>(prog_.nodes_.size());
    if (shape_numel(ss) != 1)
        op_error(OpKind::BroadcastChannel, id, "source must be a scalar, got " + shape_str(ss));
    if (h <= 0 || w <= 0) op_error(OpKind::BroadcastChannel, id, "non-positive target size");
    Node n;
    n.kind = OpKind::BroadcastChannel;
    n.a = s;
    n.shape = {1, h, w};
    return push(std::move(n));
}

int ProgramBuilder::reshape(int x, Shape shape) {
    check_id(x, "reshape");
    int id = static_cast<int>(prog_.nodes_.size());
    if (!shape_valid(shape)) op_error(OpKind::Reshape, id, "invalid shape " + shape_str(shape));
    if (shape_numel(shape) != shape_numel(shape_of(x)))
        op_error(OpKind::Reshape, id, shape_str(shape_of(x)) + " -> " + shape_str(shape) + " changes element count");
    Node n;
    n.kind = OpKind::Reshape;
    n.a = x;
    n.shape = std::move(shape);
    return push(std::move(n));
}

void ProgramBuilder::mark_output(std::string name, int id) {
    check_id(id, "mark_output");
    if (prog_.output_by_name_.count(name)) throw ShapeError("duplicate output name '" + name + "'");
    prog_.outputs_.emplace_back(name, id);
    prog_.output_by_name_.emplace(std::move(name), id);
}

std::shared_ptr<const Program> ProgramBuilder::build() {
    if (built_) throw ShapeError("ProgramBuilder::build called twice");
    if (prog_.outputs_.empty()) throw ShapeError("program has no outputs");
    built_ = true;
    return std::make_shared<const Program>(std::move(prog_));
}

// ---- workspace ----

namespace {
void ensure(Tensor& t, const Shape& shape) {
    if (t.shape != shape || t.data.size() != static_cast<size_t>(shape_numel(shape))) {
        t.shape = shape;
        t.data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
    }
}
void zero(Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0f); }
}  // namespace

Workspace::Workspace(std::shared_ptr<const Program> p) : owner_(std::move(p)), prog_(owner_.get()) {
    size_t n = static_cast<size_t>(prog_->num_nodes());
    vals_.resize(n);
    grads_.resize(n);
    live_.assign(n, 0);
    has_val_.assign(n, 0);
}

void Workspace::set_input(int id, const Tensor& value) {
    const Node& n = prog_->node(id);
    if (n.kind != OpKind::Input) throw ShapeError("set_input: node " + std::to_string(id) + " is not an input");
    if (value.shape != n.shape)
        throw ShapeError("input '" + n.name + "' expects shape " + shape_str(n.shape) + ", got " +
                         shape_str(value.shape));
    vals_[static_cast<size_t>(id)] = value;
    has_val_[static_cast<size_t>(id)] = 1;
}

void Workspace::forward(const std::map<std::string, Tensor>& inputs) {
    for (const auto& [name, t] : inputs) set_input(prog_->input_id(name), t);
    run();
}

void Workspace::run() {
    for (int id = 0; id < prog_->num_nodes(); ++id) {
        const Node& n = prog_->node(id);
        Tensor& out = vals_[static_cast<size_t>(id)];
        switch (n.kind) {
            case OpKind::Input:
                if (!has_val_[static_cast<size_t>(id)])
                    throw ShapeError("input '" + n.name + "' was not provided");
                break;
            case OpKind::Dense: {
                ensure(out, n.shape);
                const Tensor& x = vals_[n.a];
                const Tensor& w = vals_[n.b];
                const Tensor& b = vals_[n.c];
                kernels::dense_forward(w.data, b.data, x.data, out.data, w.shape[0], w.shape[1]);
                break;
            }
            case OpKind::Conv2d: {
                ensure(out, n.shape);
                kernels::conv2d_forward(n.conv, vals_[n.b].data, vals_[n.c].data, vals_[n.a].data, out.data);
                break;
            }
            case OpKind::ConvTranspose2d: {
                ensure(out, n.shape);
                zero(out);
                kernels::conv2d_backward_x(n.conv, vals_[n.b].data, vals_[n.a].data, out.data);
                const Tensor& b = vals_[n.c];
                int hw = n.shape[1] * n.shape[2];
                for (int c = 0; c < n.shape[0]; ++c)
                    for (int i = 0; i < hw; ++i) out.data[static_cast<size_t>(c) * hw + i] += b.data[c];
                break;
            }
            case OpKind::Add:
                ensure(out, n.shape);
                kernels::ew_add(vals_[n.a].data, vals_[n.b].data, out.data);
                break;
            case OpKind::Mul:
                ensure(out, n.shape);
                kernels::ew_mul(vals_[n.a].data, vals_[n.b].data, out.data);
                break;
            case OpKind::LeakyRelu:
                ensure(out, n.shape);
                kernels::leaky_relu_forward(vals_[n.a].data, n.alpha, out.data);
                break;
            case OpKind::Silu:
                ensure(out, n.shape);
                kernels::silu_forward(vals_[n.a].data, out.data);
                break;
            case OpKind::Scale:
                ensure(out, n.shape);
                kernels::ew_scale(vals_[n.a].data, n.cscale, out.data);
                break;
            case OpKind::Sum:
                ensure(out, n.shape);
                out.data[0] = static_cast<float>(kernels::sum_all(vals_[n.a].data));
                break;
            case OpKind::Mse:
                ensure(out, n.shape);
                out.data[0] = static_cast<float>(kernels::mse_all(vals_[n.a].data, vals_[n.b].data));
                break;
            case OpKind::ConcatChannels: {
                ensure(out, n.shape);
                const Tensor& a = vals_[n.a];
                const Tensor& b = vals_[n.b];
                std::copy(a.data.begin(), a.data.end(), out.data.begin());
                std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.numel());
                break;
            }
            case OpKind::BroadcastChannel: {
                ensure(out, n.shape);
                float v = vals_[n.a].data[0];
                std::fill(out.data.begin(), out.data.end(), v);
                break;
            }
            case OpKind::Reshape: {
                ensure(out, n.shape);
                std::copy(vals_[n.a].data.begin(), vals_[n.a].data.end(), out.data.begin());
                break;
            }
        }
    }
}

const Tensor& Workspace::output(std::string_view name) const {
    return vals_[static_cast<size_t>(prog_->output_id(name))];
}

double Workspace::scalar_output(std::string_view name) const {
    const Tensor& t = output(name);
    if (!t.shape.empty()) throw ShapeError("output '" + std::string(name) + "' is not a scalar");
    return static_cast<double>(t.data[0]);
}

void Workspace::adjoint(int id) {
    const Node& n = prog_->node(id);
    const Tensor& g = grads_[static_cast<size_t>(id)];
    auto want = [&](int arg) { return arg >= 0 && live_[static_cast<size_t>(arg)]; };
    switch (n.kind) {
        case OpKind::Input:
            break;
        case OpKind::Dense: {
            const Tensor& x = vals_[n.a];
            const Tensor& w = vals_[n.b];
            int m = w.shape[0], k = w.shape[1];
            if (want(n.a)) kernels::dense_backward_x(w.data, g.data, grads_[n.a].data, m, k);
            if (want(n.b)) kernels::dense_backward_w(x.data, g.data, grads_[n.b].data, m, k);
            if (want(n.c))
                for (int i = 0; i < m; ++i) grads_[n.c].data[i] += g.data[i];
            break;
        }
        case OpKind::Conv2d: {
            if (want(n.a)) kernels::conv2d_backward_x(n.conv, vals_[n.b].data, g.data, grads_[n.a].data);
            if (want(n.b)) kernels::conv2d_backward_k(n.conv, vals_[n.a].data, g.data, grads_[n.b].data);
            if (want(n.c)) kernels::reduce_channels(g.data, grads_[n.c].data, n.conv.cout, n.conv.hout * n.conv.wout);
            break;
        }
        case OpKind::ConvTranspose2d: {
            // forward was u = A^T v (+bias); so dv = A du, dk via roles swapped
            if (want(n.a)) {
                Tensor tmp(prog_->node(n.a).shape);
                kernels::conv2d_forward(n.conv, vals_[n.b].data, {}, g.data, tmp.data);
                for (size_t i = 0; i < tmp.data.size(); ++i) grads_[n.a].data[i] += tmp.data[i];
            }
            if (want(n.b)) kernels::conv2d_backward_k(n.conv, g.data, vals_[n.a].data, grads_[n.b].data);
            if (want(n.c)) kernels::reduce_channels(g.data, grads_[n.c].data, n.shape[0], n.shape[1] * n.shape[2]);
            break;
        }
        case OpKind::Add:
            if (want(n.a))
                for (size_t i = 0; i < g.data.size(); ++i) grads_[n.a].data[i] += g.data[i];
            if (want(n.b))
                for (size_t i = 0; i < g.data.size(); ++i) grads_[n.b].data[i] += g.data[i];
            break;
        case OpKind::Mul:
            if (want(n.a))
                for (size_t i = 0; i < g.data.size(); ++i) grads_[n.a].data[i] += g.data[i] * vals_[n.b].data[i];
            if (want(n.b))
                for (size_t i = 0; i < g.data.size(); ++i) grads_[n.b].data[i] += g.data[i] * vals_[n.a].data[i];
            break;
        case OpKind::LeakyRelu:
            if (want(n.a)) kernels::leaky_relu_backward(vals_[n.a].data, g.data, n.alpha, grads_[n.a].data);
            break;
        case OpKind::Silu:
            if (want(n.a)) kernels::silu_backward(vals_[n.a].data, g.data, grads_[n.a].data);
            break;
        case OpKind::Scale:
            if (want(n.a))
                for (size_t i = 0; i < g.data.size(); ++i) grads_[n.a].data[i] += g.data[i] * n.cscale;
            break;
        case OpKind::Sum:
            if (want(n.a)) {
                float gv = g.data[0];
                for (auto& d : grads_[n.a].data) d += gv;
            }
            break;
        case OpKind::Mse: {
            float gv = g.data[0];
            const Tensor& a = vals_[n.a];
            const Tensor& b = vals_[n.b];
            float inv_n = 2.0f / static_cast<float>(a.numel());
            if (want(n.a))
                for (size_t i = 0; i < a.data.size(); ++i)
                    grads_[n.a].data[i] += gv * inv_n * (a.data[i] - b.data[i]);
            if (want(n.b))
                for (size_t i = 0; i < a.data.size(); ++i)
                    grads_[n.b].data[i] -= gv * inv_n * (a.data[i] - b.data[i]);
            break;
        }
        case OpKind::ConcatChannels: {
            int64_t na = vals_[n.a].numel();
            if (want(n.a))
                for (int64_t i = 0; i < na; ++i) grads_[n.a].data[i] += g.data[i];
            if (want(n.b))
                for (int64_t i = na; i < g.numel(); ++i) grads_[n.b].data[i - na] += g.data[i];
            break;
        }
        case OpKind::BroadcastChannel:
            if (want(n.a)) grads_[n.a].data[0] += static_cast<float>(kernels::sum_all(g.data));
            break;
        case OpKind::Reshape:
            if (want(n.a))
                for (size_t i = 0; i < g.data.size(); ++i) grads_[n.a].data[i] += g.data[i];
            break;
    }
}

std::vector<Tensor> Workspace::backward(int output_node, const std::vector<int>& wrt_inputs) {
    size_t nn = static_cast<size_t>(prog_->num_nodes());
    const Node& out = prog_->node(output_node);
    if (!out.shape.empty())
        throw ShapeError("backward: output node " + std::to_string(output_node) + " is not a scalar (shape " +
                         shape_str(out.shape) + ")");
    for (int id : wrt_inputs)
        if (prog_->node(id).kind != OpKind::Input)
            throw ShapeError("backward: wrt node " + std::to_string(id) + " is not an input");

    // live = (ancestors of output) ∩ (descendants of a wrt input)
    std::vector<uint8_t> anc(nn, 0), dep(nn, 0);
    anc[static_cast<size_t>(output_node)] = 1;
    for (int id = output_node; id >= 0; --id) {
        if (!anc[static_cast<size_t>(id)]) continue;
        const Node& n = prog_->node(id);
        if (n.a >= 0) anc[static_cast<size_t>(n.a)] = 1;
        if (n.b >= 0) anc[static_cast<size_t>(n.b)] = 1;
        if (n.c >= 0) anc[static_cast<size_t>(n.c)] = 1;
    }
    for (int id : wrt_inputs) dep[static_cast<size_t>(id)] = 1;
    for (size_t id = 0; id < nn; ++id) {
        const Node& n = prog_->node(static_cast<int>(id));
        if ((n.a >= 0 && dep[static_cast<size_t>(n.a)]) || (n.b >= 0 && dep[static_cast<size_t>(n.b)]) ||
            (n.c >= 0 && dep[static_cast<size_t>(n.c)]))
            dep[id] = 1;
    }
    for (size_t id = 0; id < nn; ++id) {
        live_[id] = anc[id] && dep[id];
        if (live_[id]) {
            ensure(grads_[id], prog_->node(static_cast<int>(id)).shape);
            zero(grads_[id]);
        }
    }

    if (live_[static_cast<size_t>(output_node)]) {
        grads_[static_cast<size_t>(output_node)].data[0] = 1.0f;
        for (int id = output_node; id >= 0; --id)
            if (live_[static_cast<size_t>(id)]) adjoint(id);
    }

    std::vector<Tensor> result;
    result.reserve(wrt_inputs.size());
    for (int id : wrt_inputs) {
        if (live_[static_cast<size_t>(id)])
            result.push_back(grads_[static_cast<size_t>(id)]);
        else
            result.push_back(Tensor(prog_->node(id).shape));  // zero: output does not depend on it
    }
    return result;
}

std::vector<Tensor> Workspace::backward(std::string_view output, const std::vector<std::string>& wrt) {
    std::vector<int> ids;
    ids.reserve(wrt.size());
    for (const auto& name : wrt) ids.push_back(prog_->input_id(name));
    return backward(prog_->output_id(output), ids);
}

// ---- wrappers ----

std::map<std::string, Tensor> forward(const Program& p, const std::map<std::string, Tensor>& inputs) {
    // non-owning workspace for one-off evaluation
    auto alias = std::shared_ptr<const Program>(&p, [](const Program*) {});
    Workspace ws(alias);
    ws.forward(inputs);
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : p.outputs()) out[name] = ws.value(id);
    return out;
}

std::map<std::string, Tensor> forward(const std::shared_ptr<const Program>& p,
                                      const std::map<std::string, Tensor>& inputs) {
    return forward(*p, inputs);
}

ValueGrad value_and_grad(const std::shared_ptr<const Program>& p, const std::map<std::string, Tensor>& at,
                         const std::vector<std::string>& wrt, std::string_view output) {
    Workspace ws(p);
    ws.forward(at);
    int out_id = output.empty() ? p->sole_output_id() : p->output_id(output);
    std::vector<int> ids;
    for (const auto& name : wrt) ids.push_back(p->input_id(name));
    std::vector<Tensor> grads = ws.backward(out_id, ids);
    ValueGrad vg;
    vg.value = static_cast<double>(ws.value(out_id).data[0]);
    for (size_t i = 0; i < wrt.size(); ++i) vg.grads[wrt[i]] = std::move(grads[i]);
    return vg;
}

std::map<std::string, Tensor> finite_diff(const std::shared_ptr<const Program>& p,
                                          const std::map<std::string, Tensor>& at,
                                          const std::vector<std::string>& wrt, double h,
                                          std::string_view output) {
    if (h <= 0.0) throw ShapeError("finite_diff: step must be positive");
    Workspace ws(p);
    ws.forward(at);
    int out_id = output.empty() ? p->sole_output_id() : p->output_id(output);
    if (!p->node(out_id).shape.empty()) throw ShapeError("finite_diff: output is not a scalar");

    std::map<std::string, Tensor> result;
    for (const auto& name : wrt) {
        int in_id = p->input_id(name);
        Tensor base = at.at(name);
        Tensor grad(base.shape);
        Tensor probe = base;
        for (int64_t i = 0; i < base.numel(); ++i) {
            float orig = base.data[static_cast<size_t>(i)];
            float xp = static_cast<float>(orig + h);
            float xm = static_cast<float>(orig - h);
            probe.data[static_cast<size_t>(i)] = xp;
            ws.set_input(in_id, probe);
            ws.run();
            double fp = static_cast<double>(ws.value(out_id).data[0]);
            probe.data[static_cast<size_t>(i)] = xm;
            ws.set_input(in_id, probe);
            ws.run();
            double fm = static_cast<double>(ws.value(out_id).data[0]);
            probe.data[static_cast<size_t>(i)] = orig;
            // divide by the step actually applied after float32 rounding
            grad.data[static_cast<size_t>(i)] = static_cast<float>((fp - fm) / (double(xp) - double(xm)));
        }
        ws.set_input(in_id, base);  // restore
        result[name] = std::move(grad);
    }
    return result;
}

}  // namespace debm
