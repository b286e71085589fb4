#include "scalp/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace scalp {

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
        throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
    }
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("tensor: item() on shape " + shape_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
        throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

namespace {

static_assert(sizeof(double) == sizeof(std::uint64_t));

std::uint64_t to_little_endian(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0x00000000FFFFFFFFULL) << 32) | ((v & 0xFFFFFFFF00000000ULL) >> 32);
        v = ((v & 0x0000FFFF0000FFFFULL) << 16) | ((v & 0xFFFF0000FFFF0000ULL) >> 16);
        v = ((v & 0x00FF00FF00FF00FFULL) << 8) | ((v & 0xFF00FF00FF00FF00ULL) >> 8);
    }
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
    out << "shape:";
    for (std::size_t d : tensor.shape()) out << ' ' << d;
    out << '\n';
    for (double value : tensor.data()) {
        const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(value));
        char bytes[8];
        std::memcpy(bytes, &bits, 8);
        out.write(bytes, 8);
    }
}

Tensor read_tensor(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("tensor blob: missing header");
    if (header.rfind("shape:", 0) != 0) {
        throw std::runtime_error("tensor blob: header must start with 'shape:', got '" + header + "'");
    }
    std::istringstream fields(header.substr(6));
    Shape shape;
    long long d = 0;
    while (fields >> d) {
        if (d <= 0) throw std::runtime_error("tensor blob: non-positive dimension in '" + header + "'");
        shape.push_back(static_cast<std::size_t>(d));
    }
    if (!fields.eof()) throw std::runtime_error("tensor blob: malformed header '" + header + "'");
    std::vector<double> data(numel(shape));
    for (double& value : data) {
        char bytes[8];
        if (!in.read(bytes, 8)) throw std::runtime_error("tensor blob: truncated payload");
        std::uint64_t bits = 0;
        std::memcpy(&bits, bytes, 8);
        value = std::bit_cast<double>(to_little_endian(bits));
    }
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& tensor) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_tensor(out, tensor);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return read_tensor(in);
}

}  // namespace scalp
