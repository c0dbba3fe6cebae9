#include "debias/model.hpp"

#include <json.hpp>

#include "debias/dataset.hpp"
#include "debias/error.hpp"

namespace debias {

using nlohmann::json;

Tensor2 ModelStack::domain_logits(const Tensor2& x) const {
  if (!domain_head) throw ConfigError("model has no domain head");
  return domain_head->evaluate(encoder.evaluate(x));
}

std::uint64_t ModelStack::checksum() const {
  std::uint64_t h = encoder.checksum();
  h = mix64(h ^ task_head.checksum());
  if (domain_head) h = mix64(h ^ domain_head->checksum());
  return h;
}

ComputeGraph build_task_head(std::size_t representation_width, int num_classes, Rng& rng) {
  ComputeGraph head(representation_width);
  head.dense("task.out", static_cast<std::size_t>(num_classes), rng);
  return head;
}

ModelStack build_model(const ArchConfig& arch, std::size_t input_width, int num_classes,
                       int num_attributes, bool with_domain_head, double reversal_lambda,
                       std::uint64_t seed) {
  if (arch.representation_width == 0) throw ConfigError("arch: representation_width must be >= 1");
  ModelStack m;
  Rng enc_rng = make_rng(seed, "encoder");
  m.encoder = ComputeGraph(input_width);
  for (std::size_t i = 0; i < arch.encoder_hidden.size(); ++i) {
    m.encoder.dense("encoder.hidden" + std::to_string(i), arch.encoder_hidden[i], enc_rng).relu();
  }
  m.encoder.dense("encoder.out", arch.representation_width, enc_rng).relu();

  Rng task_rng = make_rng(seed, "task_head");
  m.task_head = build_task_head(arch.representation_width, num_classes, task_rng);

  if (with_domain_head) {
    Rng dom_rng = make_rng(seed, "domain_head");
    ComputeGraph d(arch.representation_width);
    d.grad_reversal(reversal_lambda);
    for (std::size_t i = 0; i < arch.domain_hidden.size(); ++i) {
      d.dense("domain.hidden" + std::to_string(i), arch.domain_hidden[i], dom_rng).relu();
    }
    d.dense("domain.out", static_cast<std::size_t>(num_attributes), dom_rng);
    m.domain_head = std::move(d);
  }
  return m;
}

Tensor2 extract_representations(const ModelStack& model, const Dataset& ds,
                                std::span<const std::size_t> indices) {
  return model.representations(ds.features().gather_rows(indices));
}

std::vector<int> predict(const ModelStack& model, const Dataset& ds, std::span<const std::size_t> indices) {
  return argmax_rows(model.task_logits(ds.features().gather_rows(indices)));
}

namespace {

void append_layers(json& layers, const ComputeGraph& g) {
  for (const auto& p : g.parameters()) {
    layers.push_back({{"name", p.name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"data", p.value.storage()}});
  }
}

void restore_layers(const json& layers, ComputeGraph& g, std::size_t& cursor) {
  for (auto& p : g.parameters()) {
    if (cursor >= layers.size()) throw SchemaError("checkpoint: too few layers");
    const json& l = layers[cursor++];
    const auto name = l.at("name").get<std::string>();
    if (name != p.name) throw SchemaError("checkpoint: expected layer '" + p.name + "', found '" + name + "'");
    const auto rows = l.at("rows").get<std::size_t>();
    const auto cols = l.at("cols").get<std::size_t>();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw SchemaError("checkpoint: layer '" + name + "' has the wrong shape");
    }
    p.value = Tensor2(rows, cols, l.at("data").get<std::vector<double>>());
  }
  g.invalidate_tape();
}

}  // namespace

std::string checkpoint_json(const ModelStack& model, std::uint64_t seed, const std::string& method) {
  json layers = json::array();
  append_layers(layers, model.encoder);
  append_layers(layers, model.task_head);
  if (model.domain_head) append_layers(layers, *model.domain_head);
  json doc = {{"layers", std::move(layers)}, {"seed", seed}, {"method", method}};
  return doc.dump();
}

std::string load_checkpoint(const std::string& json_text, ModelStack& model) {
  try {
    const json doc = json::parse(json_text);
    const json& layers = doc.at("layers");
    std::size_t cursor = 0;
    restore_layers(layers, model.encoder, cursor);
    restore_layers(layers, model.task_head, cursor);
    if (model.domain_head) restore_layers(layers, *model.domain_head, cursor);
    if (cursor != layers.size()) throw SchemaError("checkpoint: extra layers for this architecture");
    return doc.at("method").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace debias
