#include "seqbench/tape.hpp"

#include "seqbench/common.hpp"

namespace seqbench {

template <typename T>
void Tape<T>::run_backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  }
  loss.grad_accum()[0] = T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // branch never reached the loss
    it->pull();
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace seqbench
