#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "morelab/errors.hpp"
#include "morelab/model.hpp"
#include "morelab/train_eval.hpp"

namespace py = pybind11;
using namespace morelab;

namespace {

py::array_t<double> raster_array(const Raster& r) {
  py::array_t<double> out({r.channels, r.height, r.width});
  std::copy(r.pixels.begin(), r.pixels.end(), out.mutable_data());
  return out;
}

std::vector<std::size_t> label_ids(const std::vector<std::string>& labels, const RelationSchema& schema) {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(schema.index(l));
  return out;
}

}  // namespace

PYBIND11_MODULE(_morelab, m) {
  m.doc() = "Multi-object relation extraction: synthetic corpora, model, training and metrics.";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<EvaluationError>(m, "EvaluationError", PyExc_RuntimeError);

  py::class_<FeatureFlags>(m, "FeatureFlags")
      .def(py::init([](const std::string& spec) { return FeatureFlags::parse(spec); }), py::arg("spec") = "p,a,d")
      .def_readwrite("position", &FeatureFlags::position)
      .def_readwrite("attribute", &FeatureFlags::attribute)
      .def_readwrite("depth", &FeatureFlags::depth)
      .def("__str__", &FeatureFlags::to_string)
      .def("__eq__", [](const FeatureFlags& a, const FeatureFlags& b) { return a == b; });

  py::class_<RelationSchema>(m, "RelationSchema")
      .def(py::init([](double zipf, std::size_t relations) { return RelationSchema::make_default(zipf, relations); }),
           py::arg("zipf") = 1.0, py::arg("relations") = 21)
      .def_readonly("labels", &RelationSchema::labels)
      .def_readonly("weights", &RelationSchema::weights)
      .def_property_readonly("none_index", &RelationSchema::none_index)
      .def_property_readonly("num_relations", &RelationSchema::num_relations)
      .def("index", &RelationSchema::index)
      .def("__len__", &RelationSchema::size);

  py::class_<GeneratorConfig>(m, "GeneratorConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &GeneratorConfig::image_size)
      .def_readwrite("cell_proportions", &GeneratorConfig::cell_proportions)
      .def_readwrite("none_ratio", &GeneratorConfig::none_ratio)
      .def_readwrite("max_objects", &GeneratorConfig::max_objects)
      .def_readwrite("multi_object_p", &GeneratorConfig::multi_object_p)
      .def("validate", &GeneratorConfig::validate);

  py::class_<BBox>(m, "BBox")
      .def(py::init<int, int, int, int>(), py::arg("x"), py::arg("y"), py::arg("w"), py::arg("h"))
      .def_readwrite("x", &BBox::x)
      .def_readwrite("y", &BBox::y)
      .def_readwrite("w", &BBox::w)
      .def_readwrite("h", &BBox::h)
      .def("__repr__", [](const BBox& b) { return "BBox" + to_string(b); });

  py::class_<Instance>(m, "Instance")
      .def_readonly("id", &Instance::id)
      .def_readonly("width", &Instance::width)
      .def_readonly("height", &Instance::height)
      .def_readonly("title", &Instance::title)
      .def_property_readonly("cell", [](const Instance& i) { return to_string(i.cell()); })
      .def_property_readonly("entities",
                             [](const Instance& i) {
                               py::list out;
                               for (const auto& e : i.entities)
                                 out.append(py::dict(py::arg("span") = py::make_tuple(e.span.begin, e.span.end),
                                                     py::arg("id") = e.id, py::arg("category") = e.category));
                               return out;
                             })
      .def_property_readonly("objects",
                             [](const Instance& i) {
                               py::list out;
                               for (const auto& o : i.objects)
                                 out.append(py::dict(py::arg("bbox") = o.bbox, py::arg("z_rank") = o.z_rank,
                                                     py::arg("caption") = o.caption, py::arg("color") = o.color,
                                                     py::arg("shape") = o.shape, py::arg("category") = o.category));
                               return out;
                             })
      .def_property_readonly("gold",
                             [](const Instance& i) {
                               std::vector<std::tuple<std::size_t, std::size_t, std::string>> out;
                               for (const auto& g : i.gold) out.emplace_back(g.entity_id, g.object_id, g.relation);
                               return out;
                             })
      .def_property_readonly("rgb", [](const Instance& i) { return raster_array(i.rgb); })
      .def_property_readonly("depth", [](const Instance& i) { return raster_array(i.depth); })
      .def("to_json", &instance_to_json);

  m.def("generate_instance", &generate_instance, py::arg("seed"), py::arg("id"),
        py::arg("schema") = RelationSchema::make_default(), py::arg("config") = GeneratorConfig{});
  m.def(
      "generate_dataset",
      [](std::uint64_t seed, std::size_t train, std::size_t dev, std::size_t test, const std::filesystem::path& out,
         const RelationSchema& schema, const GeneratorConfig& config) {
        return generate_dataset(seed, SplitSizes{train, dev, test}, schema, config, out);
      },
      py::arg("seed"), py::arg("train"), py::arg("dev"), py::arg("test"), py::arg("out"),
      py::arg("schema") = RelationSchema::make_default(), py::arg("config") = GeneratorConfig{},
      "Writes a corpus directory and returns its statistics as JSON text.");
  m.def("read_split", &read_split, py::arg("path"), py::arg("load_rasters") = true);
  m.def("corpus_stats", &corpus_stats, py::arg("instances"), py::arg("schema") = RelationSchema::make_default());
  m.def("split_by_reference_ratio", [](std::size_t total) {
    const SplitSizes s = split_by_reference_ratio(total);
    return py::make_tuple(s.train, s.dev, s.test);
  });

  m.def(
      "position_feature",
      [](const BBox& box, int w, int h) { return position_feature(box, w, h).values(); }, py::arg("bbox"),
      py::arg("width"), py::arg("height"), "(x_center, y_center, width, height, area), all normalised.");

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](const std::string& preset) {
             if (preset == "toy") return ModelConfig::toy(generator_vocabulary().size());
             if (preset == "tiny") return ModelConfig::tiny(generator_vocabulary().size());
             if (preset == "base") {
               ModelConfig c;
               c.vocab_size = generator_vocabulary().size();
               return c;
             }
             throw InputError("unknown preset '" + preset + "' (toy, tiny, base)");
           }),
           py::arg("preset") = "toy")
      .def_readwrite("hidden", &ModelConfig::hidden)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("ffn", &ModelConfig::ffn)
      .def_readwrite("text_layers", &ModelConfig::text_layers)
      .def_readwrite("visual_layers", &ModelConfig::visual_layers)
      .def_readwrite("fusion_layers", &ModelConfig::fusion_layers)
      .def_readwrite("features", &ModelConfig::features)
      .def_readwrite("init_seed", &ModelConfig::init_seed)
      .def("to_json", &ModelConfig::to_json);

  py::class_<MoreFormer>(m, "Model")
      .def(py::init<const ModelConfig&>(), py::arg("config"))
      .def_property_readonly("config", &MoreFormer::config)
      .def_property_readonly("num_parameters", [](const MoreFormer& mdl) { return mdl.parameters().num_scalars(); })
      .def(
          "scores",
          [](const MoreFormer& mdl, const Instance& inst) {
            return mdl.scores(
                prepare_instance(inst, generator_vocabulary(), RelationSchema::make_default(), mdl.config()));
          },
          py::arg("instance"), "Logits per (entity, object) pair in entity-major order.")
      .def(
          "predict",
          [](const MoreFormer& mdl, const Instance& inst) {
            const RelationSchema schema = RelationSchema::make_default();
            std::vector<std::string> out;
            for (std::size_t l : mdl.predict(prepare_instance(inst, generator_vocabulary(), schema, mdl.config())))
              out.push_back(schema.labels.at(l));
            return out;
          },
          py::arg("instance"))
      .def("save", &MoreFormer::save, py::arg("stem"))
      .def_static("load", &MoreFormer::load, py::arg("stem"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("dropout", &TrainConfig::dropout)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("features", &TrainConfig::features)
      .def_readwrite("threads", &TrainConfig::threads);

  m.def(
      "train",
      [](MoreFormer& mdl, const std::vector<Instance>& train_split, const std::vector<Instance>& dev_split,
         const TrainConfig& config) {
        const Vocabulary vocab = generator_vocabulary();
        const RelationSchema schema = RelationSchema::make_default();
        const auto tr = prepare_all(train_split, vocab, schema, mdl.config());
        const auto dv = prepare_all(dev_split, vocab, schema, mdl.config());
        py::gil_scoped_release release;
        return train(mdl, tr, dv, config).csv();
      },
      py::arg("model"), py::arg("train"), py::arg("dev"), py::arg("config"),
      "Trains in place (best-dev parameters kept) and returns the CSV log.");

  m.def(
      "evaluate",
      [](const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
         const RelationSchema& schema) {
        return evaluate(label_ids(predicted, schema), label_ids(gold, schema), schema).to_json();
      },
      py::arg("predicted"), py::arg("gold"), py::arg("schema") = RelationSchema::make_default(),
      "MetricsReport as JSON text.");

  m.def(
      "disambiguation_eval",
      [](const std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::string>>& predicted,
         const std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::string>>& gold,
         const std::vector<std::size_t>& objects_per_instance, const RelationSchema& schema) {
        auto convert = [&](const auto& rows) {
          std::vector<Triple> out;
          for (const auto& [i, e, o, rel] : rows) out.push_back({i, e, o, schema.index(rel)});
          return out;
        };
        const auto r = disambiguation_eval(convert(predicted), convert(gold), objects_per_instance,
                                           schema.none_index());
        auto scores = [](const DisambiguationCounts& c) {
          return py::dict(py::arg("true_positive") = c.true_positive, py::arg("predicted") = c.predicted,
                          py::arg("gold") = c.gold, py::arg("precision") = c.scores.precision,
                          py::arg("recall") = c.scores.recall, py::arg("f1") = c.scores.f1);
        };
        return py::dict(py::arg("full") = scores(r.full), py::arg("multi_object") = scores(r.multi_object));
      },
      py::arg("predicted"), py::arg("gold"), py::arg("objects_per_instance"),
      py::arg("schema") = RelationSchema::make_default(),
      "Triples are (instance, entity, object, relation).");

  m.def(
      "cohen_kappa_weighted",
      [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, std::size_t num_labels,
         bool weighted) {
        return cohen_kappa_weighted(a, b, num_labels, weighted ? KappaWeights::kLinear : KappaWeights::kUnweighted);
      },
      py::arg("a"), py::arg("b"), py::arg("num_labels"), py::arg("weighted") = true);

  py::class_<AdamWState>(m, "AdamWState").def(py::init<>()).def_readonly("step", &AdamWState::step);
  m.def(
      "adamw_step",
      [](std::vector<py::array_t<double, py::array::c_style>> params,
         const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& grads, AdamWState& state,
         double lr, double beta1, double beta2, double eps, double weight_decay) {
        // Copy in, step, copy out: arrays are updated in place.
        std::vector<Tensor> tensors;
        std::vector<std::vector<double>> g;
        for (auto& p : params) tensors.emplace_back(Shape{static_cast<std::size_t>(p.size())},
                                                    std::vector<double>(p.data(), p.data() + p.size()));
        for (const auto& x : grads) g.emplace_back(x.data(), x.data() + x.size());
        std::vector<Tensor*> ptrs;
        for (auto& t : tensors) ptrs.push_back(&t);
        adamw_step(ptrs, g, state, {lr, beta1, beta2, eps, weight_decay});
        for (std::size_t i = 0; i < params.size(); ++i)
          std::copy(tensors[i].data().begin(), tensors[i].data().end(), params[i].mutable_data());
      },
      py::arg("params"), py::arg("grads"), py::arg("state"), py::arg("lr") = 1e-3, py::arg("beta1") = 0.9,
      py::arg("beta2") = 0.999, py::arg("eps") = 1e-8, py::arg("weight_decay") = 0.01);

  m.def(
      "gradcheck",
      [](const std::string& size, const std::string& features, std::uint64_t seed) {
        ModelConfig c = ModelConfig::tiny(0);
        c.features = FeatureFlags::parse(features);
        c.init_seed = seed;
        const GradCheckResult r = model_grad_check(c, gradcheck_instance(size), RelationSchema::make_default());
        return py::dict(py::arg("max_rel_error") = r.max_rel_error, py::arg("coordinates") = r.coordinates);
      },
      py::arg("size") = "small", py::arg("features") = "p,a,d", py::arg("seed") = 0);
}
