#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "atrl/tensor.hpp"

namespace atrl {

// Reverse-mode tape. Ops append one step per recorded output; backward()
// zeroes the gradients of every recorded output, seeds the root with 1, and
// replays the steps in reverse. Leaf gradients are only ever accumulated
// into, so the caller owns zeroing them between optimization steps. Use one
// tape per forward pass.
class Tape {
 public:
  void record(Tensor output, std::function<void()> step) {
    steps_.push_back(Step{std::move(output), std::move(step)});
  }

  std::size_t size() const { return steps_.size(); }
  bool empty() const { return steps_.empty(); }
  void clear() { steps_.clear(); }

  void backward(Tensor root) {
    if (root.numel() != 1) {
      throw Error("backward root must be a scalar, shape is " +
                  shape_str(root.shape()));
    }
    for (auto& s : steps_) {
      auto& g = s.output.grad();
      std::fill(g.begin(), g.end(), 0.0);
    }
    root.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->fn();
  }

 private:
  struct Step {
    Tensor output;
    std::function<void()> fn;
  };
  std::vector<Step> steps_;
};

}  // namespace atrl
