#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdlm {

using Shape = std::vector<std::size_t>;

// Dimension/operand mismatch (messages name both shapes).
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Value outside an operation's domain (log of non-positive, bad token id, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// NaN/Inf produced where only finite values are legal.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File and serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config-file failures; messages carry the offending line number.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
    if (s.empty()) return "scalar";
    std::ostringstream os;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

/// Dense n-dimensional array of Real, flat row-major storage.
/// A rank-0 tensor (empty shape) holds a single scalar.
template <typename Real>
class Tensor {
public:
    Tensor() : shape_{}, data_(1, Real(0)) {}

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_numel(shape_), Real(0));
    }

    Tensor(Shape shape, std::vector<Real> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (shape_numel(shape_) != data_.size()) {
            throw ShapeError("tensor: shape " + shape_str(shape_) + " wants " +
                             std::to_string(shape_numel(shape_)) + " values, got " +
                             std::to_string(data_.size()));
        }
    }

    static Tensor scalar(Real v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, Real v) {
        Tensor t(std::move(shape));
        for (Real& x : t.data_) x = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }
    std::size_t byte_size() const { return data_.size() * sizeof(Real); }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real& at(std::size_t i) { return data_[i]; }
    Real at(std::size_t i) const { return data_[i]; }
    Real& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    Real at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    Real& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    Real at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Real item() const {
        if (data_.size() != 1) {
            throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not scalar");
        }
        return data_[0];
    }

    void fill(Real v) {
        for (Real& x : data_) x = v;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return Tensor<Other>(shape_, std::move(out));
    }

private:
    void validate_shape() const {
        for (std::size_t e : shape_) {
            if (e == 0) {
                throw ShapeError("tensor: zero extent in shape " + shape_str(shape_));
            }
        }
    }

    Shape shape_;
    std::vector<Real> data_;
};

template <typename Real>
void ensure_finite(const Tensor<Real>& t, const char* where) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) {
            throw NumericError(std::string(where) + ": non-finite value at flat index " +
                               std::to_string(i));
        }
    }
}

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* where) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

}  // namespace ssdlm
