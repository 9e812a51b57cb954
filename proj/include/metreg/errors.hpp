#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace metreg {

// Shape mismatches, empty inputs, out-of-range options.
class InvalidInputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Structurally valid but numerically degenerate inputs (zero variance,
// all points coincident). The caller decides the fallback.
class DegenerateInputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A cached or stateful object no longer matches the data it is used with.
class InvalidStateError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Optimizer update aborted before touching any parameter; carries the
// index of the parameter block holding the NaN gradient.
class NanGradientError : public std::runtime_error {
public:
  NanGradientError(std::size_t block_index, const std::string& what)
      : std::runtime_error(what), block_index_(block_index) {}

  std::size_t block_index() const noexcept { return block_index_; }

private:
  std::size_t block_index_;
};

// Every neighborhood-graph candidate left the majority of point pairs
// unreachable, so no geodesic correlation can be computed.
class GraphDegeneracyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Training stopped on a non-finite loss; carries the failing iteration
// and the batch indices that produced it.
class TrainAbortError : public std::runtime_error {
public:
  TrainAbortError(std::uint64_t iteration, std::vector<std::size_t> batch,
                  const std::string& what)
      : std::runtime_error(what), iteration_(iteration), batch_(std::move(batch)) {}

  std::uint64_t iteration() const noexcept { return iteration_; }
  const std::vector<std::size_t>& batch_indices() const noexcept { return batch_; }

private:
  std::uint64_t iteration_;
  std::vector<std::size_t> batch_;
};

}  // namespace metreg
