#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace demorph {

// Error taxonomy. Contract violations throw; nothing numeric fails silently.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class TapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense n-d array of 64-bit reals, row-major. Value semantics: ops never
// mutate their inputs. grad_id is a handle into the tape identified by
// grad_tape (-1 = detached); it is bookkeeping, not data. A handle is only
// meaningful on the tape that issued it.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    int grad_id = -1;
    uint64_t grad_tape = 0;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double value);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    int rank() const { return static_cast<int>(shape.size()); }

    // Flat accessors for the common 4-d [B,C,H,W] layout.
    double& at4(int64_t b, int64_t c, int64_t h, int64_t w);
    double at4(int64_t b, int64_t c, int64_t h, int64_t w) const;
};

bool same_shape(const Tensor& a, const Tensor& b);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_rank(const Tensor& t, int rank, const char* op);

// Throws NumericError if any entry is NaN/Inf. Called on every op output.
void ensure_finite(const Tensor& t, const char* op);
void ensure_finite(const std::vector<double>& v, const char* op);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace demorph
