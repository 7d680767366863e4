// Python bindings for the core toolkit: datasets, models, checkpoints,
// losses, attack crafting, training and evaluation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "jatp/jatp.hpp"

namespace py = pybind11;
using namespace jatp;

namespace {

Tensor<float> tensor_from_array(const py::array_t<float>& a) {
    py::buffer_info info = a.request();
    Shape shape;
    for (auto d : info.shape) shape.push_back(int(d));
    Tensor<float> t(shape);
    auto contiguous = py::array_t<float, py::array::c_style |
                                             py::array::forcecast>::ensure(a);
    std::copy_n(static_cast<const float*>(contiguous.request().ptr),
                t.size(), t.data());
    return t;
}

py::array_t<float> array_from_tensor(const Tensor<float>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> a(shape);
    std::copy_n(t.data(), t.size(), static_cast<float*>(a.request().ptr));
    return a;
}

ImageBatch batch_from_python(const py::array_t<float>& images,
                             const std::vector<int>& labels) {
    ImageBatch b;
    b.pixels = tensor_from_array(images);
    if (b.pixels.rank() != 4)
        throw ArgumentError("images must have shape (N, C, H, W)");
    if (int(labels.size()) != b.pixels.dim(0))
        throw ArgumentError("labels length must match the batch size");
    b.labels = labels;
    return b;
}

}  // namespace

PYBIND11_MODULE(_jatp, m) {
    m.doc() = "adversarial preprocessing defense toolkit";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ArgumentError>(m, "ArgumentError");
    py::register_exception<IngestionError>(m, "IngestionError");
    py::register_exception<NumericError>(m, "NumericError");
    py::register_exception<ReportError>(m, "ReportError");

    m.def("derive_seed", &derive_seed, py::arg("global_seed"),
          py::arg("purpose"), py::arg("index") = 0);

    // ---- data ----------------------------------------------------------
    py::class_<AugmentSpec>(m, "AugmentSpec")
        .def(py::init<>())
        .def_readwrite("enabled", &AugmentSpec::enabled)
        .def_readwrite("pad", &AugmentSpec::pad)
        .def_readwrite("crop", &AugmentSpec::crop)
        .def_readwrite("horizontal_flip", &AugmentSpec::horizontal_flip);

    py::class_<DatasetSpec>(m, "DatasetSpec")
        .def(py::init<>())
        .def_readwrite("num_classes", &DatasetSpec::num_classes)
        .def_readwrite("channels", &DatasetSpec::channels)
        .def_readwrite("height", &DatasetSpec::height)
        .def_readwrite("width", &DatasetSpec::width)
        .def_readwrite("train_per_class", &DatasetSpec::train_per_class)
        .def_readwrite("test_per_class", &DatasetSpec::test_per_class)
        .def_readwrite("noise_sigma", &DatasetSpec::noise_sigma)
        .def_readwrite("augment", &DatasetSpec::augment);

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly(
            "images", [](const Dataset& d) { return array_from_tensor(d.images); })
        .def_readonly("labels", &Dataset::labels)
        .def_readonly("num_classes", &Dataset::num_classes)
        .def("size", &Dataset::size)
        .def("digest", &Dataset::digest);

    m.def(
        "load_dataset",
        [](const DatasetSpec& spec, std::uint64_t seed) {
            auto s = load_dataset(spec, seed);
            return py::make_tuple(std::move(s.train), std::move(s.test));
        },
        py::arg("spec"), py::arg("seed"),
        "returns (train, test) splits");

    // ---- models and checkpoints ----------------------------------------
    py::class_<TargetModel>(m, "TargetModel")
        .def(py::init<int, int, std::uint64_t, int>(), py::arg("base_width"),
             py::arg("num_classes"), py::arg("init_seed"),
             py::arg("in_channels") = 3)
        .def_property_readonly("arch_id", &TargetModel::arch_id)
        .def_property("frozen", &TargetModel::frozen, &TargetModel::set_frozen)
        .def("param_digest",
             [](const TargetModel& t) { return t.params().digest(); })
        .def("logits",
             [](const TargetModel& t, const py::array_t<float>& images) {
                 ImageBatch b = batch_from_python(
                     images, std::vector<int>(size_t(images.shape(0)), 0));
                 return array_from_tensor(t.logits(b));
             })
        .def("classify", [](const TargetModel& t,
                            const py::array_t<float>& images) {
            ImageBatch b = batch_from_python(
                images, std::vector<int>(size_t(images.shape(0)), 0));
            return classify(t, b);
        });

    py::class_<Preprocessor>(m, "Preprocessor")
        .def(py::init<int, int, std::uint64_t, int>(), py::arg("width"),
             py::arg("num_blocks"), py::arg("init_seed"),
             py::arg("channels") = 3)
        .def_static("identity", &Preprocessor::identity,
                    py::arg("width") = 4, py::arg("num_blocks") = 1)
        .def_property_readonly("arch_id", &Preprocessor::arch_id)
        .def("param_digest",
             [](const Preprocessor& p) { return p.params().digest(); })
        .def("apply", [](const Preprocessor& p,
                         const py::array_t<float>& images) {
            return array_from_tensor(p.apply(tensor_from_array(images)));
        });

    m.def("save_target", &ckpt::save_target, py::arg("model"), py::arg("path"));
    m.def("load_target", &ckpt::load_target, py::arg("path"));
    m.def("save_preprocessor", &ckpt::save_preprocessor, py::arg("model"),
          py::arg("path"));
    m.def("load_preprocessor", &ckpt::load_preprocessor, py::arg("path"));

    // ---- losses ----------------------------------------------------------
    m.def(
        "pixel_loss",
        [](const py::array_t<float>& a, const py::array_t<float>& b) {
            return pixel_loss(tensor_from_array(a), tensor_from_array(b));
        },
        py::arg("recovered"), py::arg("natural"));
    m.def(
        "bce_loss",
        [](const py::array_t<float>& probs, const std::vector<int>& labels) {
            return bce_loss(tensor_from_array(probs), labels);
        },
        py::arg("probabilities"), py::arg("labels"));
    m.def(
        "fsm_loss",
        [](const py::array_t<float>& a, const py::array_t<float>& b) {
            return fsm_loss(tensor_from_array(a), tensor_from_array(b));
        },
        py::arg("features_a"), py::arg("features_b"));
    m.def("combined_total", &jatp_total, py::arg("adversarial"),
          py::arg("pixel"), py::arg("beta"));

    // ---- attacks -----------------------------------------------------------
    py::class_<PerturbationBudget>(m, "PerturbationBudget")
        .def(py::init<>())
        .def_readwrite("epsilon", &PerturbationBudget::epsilon)
        .def_readwrite("step_size", &PerturbationBudget::step_size)
        .def_readwrite("num_steps", &PerturbationBudget::num_steps)
        .def_readwrite("random_start", &PerturbationBudget::random_start);

    py::enum_<Objective>(m, "Objective")
        .value("cross_entropy", Objective::cross_entropy)
        .value("dlr", Objective::dlr)
        .value("feature_distance", Objective::feature_distance);

    py::enum_<Scope>(m, "Scope")
        .value("oblivious", Scope::oblivious)
        .value("full", Scope::full);

    py::enum_<FeatureTap::Host>(m, "TapHost")
        .value("target", FeatureTap::Host::target)
        .value("full", FeatureTap::Host::full);

    py::class_<FeatureTap>(m, "FeatureTap")
        .def(py::init<>())
        .def_readwrite("host", &FeatureTap::host)
        .def_readwrite("layer", &FeatureTap::layer);

    py::class_<AttackSpec>(m, "AttackSpec")
        .def(py::init<>())
        .def_readwrite("id", &AttackSpec::id)
        .def_readwrite("objective", &AttackSpec::objective)
        .def_readwrite("scope", &AttackSpec::scope)
        .def_readwrite("bpda", &AttackSpec::bpda)
        .def_readwrite("tap", &AttackSpec::tap)
        .def_readwrite("budget", &AttackSpec::budget);

    m.def(
        "craft",
        [](const AttackSpec& spec, const Preprocessor* pre,
           const TargetModel& tgt, const py::array_t<float>& images,
           const std::vector<int>& labels, std::uint64_t seed) {
            ImageBatch clean = batch_from_python(images, labels);
            Rng rng(seed);
            ImageBatch adv = craft(spec, pre, tgt, clean, rng);
            return array_from_tensor(adv.pixels);
        },
        py::arg("spec"), py::arg("preprocessor").none(true), py::arg("target"),
        py::arg("images"), py::arg("labels"), py::arg("seed"));

    // ---- training and evaluation ----------------------------------------
    py::enum_<TargetStrategy>(m, "TargetStrategy")
        .value("natural", TargetStrategy::natural)
        .value("standard_at", TargetStrategy::standard_at)
        .value("trades", TargetStrategy::trades);

    py::enum_<TrainVariant>(m, "TrainVariant")
        .value("jatp", TrainVariant::jatp)
        .value("jatp_prime", TrainVariant::jatp_prime)
        .value("oblivious_pixel", TrainVariant::oblivious_pixel)
        .value("oblivious_feature", TrainVariant::oblivious_feature)
        .value("full_pixel", TrainVariant::full_pixel);

    py::class_<OptimizerConfig>(m, "OptimizerConfig")
        .def(py::init<>())
        .def_readwrite("initial_lr", &OptimizerConfig::initial_lr)
        .def_readwrite("momentum", &OptimizerConfig::momentum)
        .def_readwrite("weight_decay", &OptimizerConfig::weight_decay)
        .def_readwrite("lr_drop_epochs", &OptimizerConfig::lr_drop_epochs)
        .def_readwrite("lr_drop_factor", &OptimizerConfig::lr_drop_factor);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("variant", &TrainConfig::variant)
        .def_readwrite("strategy", &TrainConfig::strategy)
        .def_readwrite("target_width", &TrainConfig::target_width)
        .def_readwrite("pre_width", &TrainConfig::pre_width)
        .def_readwrite("pre_blocks", &TrainConfig::pre_blocks)
        .def_readwrite("tap", &TrainConfig::tap)
        .def_readwrite("optimizer", &TrainConfig::optimizer)
        .def_readwrite("budget", &TrainConfig::budget)
        .def_readwrite("weights", &TrainConfig::weights);

    py::class_<LossWeights>(m, "LossWeights")
        .def(py::init<>())
        .def_readwrite("alpha", &LossWeights::alpha)
        .def_readwrite("beta", &LossWeights::beta);

    m.def(
        "train_target",
        [](const Dataset& train, const Dataset& test, const TrainConfig& cfg,
           TargetStrategy strategy) {
            auto r = train_target(train, test, cfg, strategy);
            return py::make_tuple(std::move(r.model), r.aborted);
        },
        py::arg("train"), py::arg("test"), py::arg("config"),
        py::arg("strategy"), "returns (model, aborted)");

    m.def(
        "train_defense",
        [](const TargetModel& target, const Dataset& train,
           const TrainConfig& cfg) {
            auto r = train_defense(target, train, cfg);
            return py::make_tuple(std::move(r.pre), r.aborted);
        },
        py::arg("target"), py::arg("train"), py::arg("config"),
        "returns (preprocessor, aborted)");

    py::class_<EvalConfig>(m, "EvalConfig")
        .def(py::init<>())
        .def_readwrite("split", &EvalConfig::split)
        .def_readwrite("subsample", &EvalConfig::subsample)
        .def_readwrite("suite", &EvalConfig::suite);

    py::class_<EvalRow>(m, "EvalRow")
        .def_readonly("defense_id", &EvalRow::defense_id)
        .def_readonly("target_id", &EvalRow::target_id)
        .def_readonly("attack_id", &EvalRow::attack_id)
        .def_readonly("clean_accuracy", &EvalRow::clean_accuracy)
        .def_readonly("robust_accuracy", &EvalRow::robust_accuracy)
        .def_readonly("examples", &EvalRow::examples);

    m.def(
        "evaluate",
        [](const std::vector<AttackSpec>& suite, const Preprocessor* pre,
           const TargetModel& tgt, const Dataset& data, const EvalConfig& cfg,
           std::uint64_t seed, const std::string& defense_id) {
            return evaluate(suite, pre, tgt, data, cfg, seed, defense_id).rows;
        },
        py::arg("suite"), py::arg("preprocessor").none(true),
        py::arg("target"), py::arg("data"), py::arg("config"), py::arg("seed"),
        py::arg("defense_id") = "defense", "returns a list of EvalRow");

    m.def(
        "fooling_rate",
        [](const std::vector<int>& clean_pred, const std::vector<int>& adv_pred,
           const std::vector<int>& labels) {
            return fooling_rate(clean_pred, adv_pred, labels);
        },
        py::arg("clean_predictions"), py::arg("adversarial_predictions"),
        py::arg("labels"));
}
