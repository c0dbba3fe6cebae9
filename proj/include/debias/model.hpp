#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "debias/graph.hpp"

namespace debias {

class Dataset;

struct ArchConfig {
  std::vector<std::size_t> encoder_hidden = {32};
  std::size_t representation_width = 8;
  std::vector<std::size_t> domain_hidden = {16};
};

/// Encoder (features -> z), task head (z -> class logits) and an optional domain
/// head (gradient reversal, then z -> attribute logits).
struct ModelStack {
  ComputeGraph encoder;
  ComputeGraph task_head;
  std::optional<ComputeGraph> domain_head;

  std::size_t representation_width() const { return encoder.output_width(); }

  Tensor2 representations(const Tensor2& x) const { return encoder.evaluate(x); }
  Tensor2 task_logits(const Tensor2& x) const { return task_head.evaluate(encoder.evaluate(x)); }
  Tensor2 domain_logits(const Tensor2& x) const;

  std::uint64_t checksum() const;
};

/// Parameters come from independent streams "encoder", "task_head" and
/// "domain_head" under `seed`, so stacks with and without a domain head share
/// their encoder and task-head initialization.
ModelStack build_model(const ArchConfig& arch, std::size_t input_width, int num_classes,
                       int num_attributes, bool with_domain_head, double reversal_lambda,
                       std::uint64_t seed);

ComputeGraph build_task_head(std::size_t representation_width, int num_classes, Rng& rng);

/// Encoder outputs for the given rows; row i = encoder(x_indices[i]).
Tensor2 extract_representations(const ModelStack& model, const Dataset& ds,
                                std::span<const std::size_t> indices);

std::vector<int> predict(const ModelStack& model, const Dataset& ds, std::span<const std::size_t> indices);

/// Checkpoint document: {"layers": [{"name","rows","cols","data"}], "seed", "method"}.
std::string checkpoint_json(const ModelStack& model, std::uint64_t seed, const std::string& method);

/// Overwrites the stack's parameters from a checkpoint produced for the same architecture.
/// Returns the stored method id. Throws SchemaError on any mismatch.
std::string load_checkpoint(const std::string& json_text, ModelStack& model);

}  // namespace debias
