#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bdl/adam.hpp"
#include "bdl/autograd.hpp"

namespace bdl {

struct ConvBlock {
  std::size_t filters = 8;
  std::size_t kernel = 3;
  std::size_t stride = 2;

  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

/// Conv blocks (conv + ReLU, same padding), global average pool, a ReLU dense layer
/// producing the hidden representation h(x), then a linear head giving logits.
struct ClassifierSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<ConvBlock> conv{{8, 3, 2}, {16, 3, 2}};
  std::size_t hidden_dim = 64;
  std::size_t n_classes = 3;

  void validate() const;
  std::string to_text() const;
  static ClassifierSpec from_text(const std::string& text);
  /// "8x3x2 16x3x2" -> blocks of filters x kernel x stride.
  static std::vector<ConvBlock> parse_conv(const std::string& text);
  static std::string format_conv(const std::vector<ConvBlock>& blocks);

  friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;
};

/// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

class Classifier {
 public:
  /// Fan-in scaled normal initialization from `seed`; biases start at zero.
  Classifier(ClassifierSpec spec, std::uint64_t seed);
  Classifier(ClassifierSpec spec, std::vector<Parameter> params);

  const ClassifierSpec& spec() const { return spec_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  /// Registers every parameter as a leaf on `tape`, in parameters() order.
  std::vector<Var> bind(Tape& tape, bool requires_grad) const;

  /// h(x): (b, H, W, 3) -> (b, hidden_dim).
  Var hidden(std::span<const Var> params, const Var& batch) const;
  /// g without the softmax: (b, hidden_dim) -> (b, n_classes).
  Var head(std::span<const Var> params, const Var& hidden) const;
  Var logits(std::span<const Var> params, const Var& batch) const;

  Tensor forward_hidden(const Tensor& batch) const;
  Tensor forward_logits(const Tensor& batch) const;
  std::vector<int> predict(const Tensor& batch) const;

  /// Directory of `<name>.bdtf` files plus `model.txt` holding the spec and parameter names.
  void save(const std::filesystem::path& dir) const;
  static Classifier load(const std::filesystem::path& dir);

 private:
  void check_batch(const Tensor& batch) const;

  ClassifierSpec spec_;
  std::vector<Parameter> params_;
};

}  // namespace bdl
