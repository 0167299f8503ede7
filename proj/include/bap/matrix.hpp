#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bap {

/// Dense row-major matrix. Row = token for hidden-state matrices.
template <typename T>
struct BasicMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  BasicMatrix() = default;
  BasicMatrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), values(r * c, fill) {}
  BasicMatrix(std::size_t r, std::size_t c, std::vector<T> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) {
      throw std::invalid_argument("matrix value count " + std::to_string(values.size()) +
                                  " does not match shape " + std::to_string(rows) + "x" +
                                  std::to_string(cols));
    }
  }

  T& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<T> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  std::size_t size() const { return values.size(); }

  template <typename U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows, cols);
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
    return out;
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;
};

using Matrix = BasicMatrix<float>;

}  // namespace bap
