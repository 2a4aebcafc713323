#pragma once

#include <functional>
#include <vector>

#include "seqbench/tensor.hpp"

namespace seqbench {

// Recorded forward graph for one reverse-mode replay. Nodes are appended in
// execution order, which is a topological order by construction: every
// node's inputs were produced by earlier nodes or are leaves.
template <typename T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    // Scatters the output gradient into the input gradients (accumulating,
    // never assigning). Saved activations live in this closure.
    std::function<void()> pull;
  };

  void record(const char* op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              std::function<void()> pull) {
    output.set_tracked(true);
    nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(pull)});
  }

  // Seeds d(loss)/d(loss) = 1 and replays the tape once, back to front.
  // Nodes whose output never received a gradient are skipped. Gradients
  // accumulate (+=) across fan-out.
  void run_backward(const Tensor<T>& loss);

  size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

// Reverse-mode gradient propagation from a scalar loss to every
// requires-grad leaf reachable through the tape.
template <typename T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
  tape.run_backward(loss);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace seqbench
