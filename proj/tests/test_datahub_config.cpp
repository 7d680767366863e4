#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "jatp/jatp.hpp"

using namespace jatp;

TEST_CASE("synthetic data is deterministic, balanced, and in range") {
    DatasetSpec spec;
    spec.num_classes = 5;
    spec.height = spec.width = 8;
    spec.train_per_class = 10;
    spec.test_per_class = 4;

    auto a = load_dataset(spec, 42);
    auto b = load_dataset(spec, 42);
    CHECK(a.train.digest() == b.train.digest());
    CHECK(a.test.digest() == b.test.digest());
    CHECK(a.train.digest() != a.test.digest());

    auto c = load_dataset(spec, 43);
    CHECK(a.train.digest() != c.train.digest());

    CHECK(a.train.size() == 50);
    CHECK(a.test.size() == 20);
    std::vector<int> counts(5, 0);
    for (int y : a.train.labels) counts[std::size_t(y)]++;
    for (int n : counts) CHECK(n == 10);
    for (float v : a.train.images.vec()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("synthetic classes are separable by a nearest-template probe") {
    // independent oracle: classify test images by nearest class mean computed
    // on the train split; well over chance confirms label-image association
    DatasetSpec spec;
    spec.num_classes = 4;
    spec.height = spec.width = 8;
    spec.train_per_class = 20;
    spec.test_per_class = 20;
    auto s = load_dataset(spec, 7);

    const std::size_t per = std::size_t(3) * 8 * 8;
    std::vector<std::vector<double>> mean(4, std::vector<double>(per, 0.0));
    for (int i = 0; i < s.train.size(); ++i) {
        const float* img = s.train.images.data() + std::size_t(i) * per;
        auto& m = mean[std::size_t(s.train.labels[std::size_t(i)])];
        for (std::size_t p = 0; p < per; ++p) m[p] += img[p];
    }
    for (auto& m : mean)
        for (auto& v : m) v /= spec.train_per_class;

    int correct = 0;
    for (int i = 0; i < s.test.size(); ++i) {
        const float* img = s.test.images.data() + std::size_t(i) * per;
        int best = 0;
        double bestd = 1e300;
        for (int y = 0; y < 4; ++y) {
            double d = 0;
            for (std::size_t p = 0; p < per; ++p) {
                const double e = img[p] - mean[std::size_t(y)][p];
                d += e * e;
            }
            if (d < bestd) { bestd = d; best = y; }
        }
        correct += best == s.test.labels[std::size_t(i)];
    }
    CHECK(double(correct) / s.test.size() >= 0.95);
}

TEST_CASE("packed binary loader and its failure modes") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "jatp_packed";
    fs::create_directories(dir);
    DatasetSpec spec;
    spec.source = DataSource::packed_binary;
    spec.num_classes = 3;
    spec.channels = 1;
    spec.height = spec.width = 2;
    spec.train_per_class = 2;
    spec.test_per_class = 2;
    spec.path = dir.string();

    auto write_records = [&](const std::string& name,
                             const std::vector<unsigned char>& bytes) {
        std::ofstream f((dir / name).string(), std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                std::streamsize(bytes.size()));
    };
    // 2 records: label byte + 4 pixel bytes
    write_records("train.bin", {0, 0, 64, 128, 255, 2, 10, 20, 30, 40});
    write_records("test.bin", {1, 1, 2, 3, 4, 0, 5, 6, 7, 8});

    auto s = load_dataset(spec, 1);
    CHECK(s.train.size() == 2);
    CHECK(s.train.labels[0] == 0);
    CHECK(s.train.labels[1] == 2);
    CHECK(s.train.images[1] == doctest::Approx(64.0f / 255.0f));
    CHECK(s.train.images[3] == doctest::Approx(1.0f));

    // truncated file -> size not a record multiple
    write_records("train.bin", {0, 0, 64, 128});
    CHECK_THROWS_WITH_AS(load_dataset(spec, 1),
                         doctest::Contains("record size"), IngestionError);

    // label out of range
    write_records("train.bin", {7, 0, 0, 0, 0});
    CHECK_THROWS_WITH_AS(load_dataset(spec, 1),
                         doctest::Contains("label out of range"),
                         IngestionError);

    // missing file
    fs::remove(dir / "train.bin");
    CHECK_THROWS_AS(load_dataset(spec, 1), IngestionError);
    fs::remove_all(dir);
}

TEST_CASE("dataset spec validation") {
    DatasetSpec spec;
    spec.num_classes = 1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.num_classes = 3;
    spec.height = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.height = 8;
    spec.train_per_class = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("augmentation transforms") {
    // flip oracle on a 1x1x2x2 image
    Tensor<float> img(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
    flip_horizontal(img.data(), 1, 2, 2);
    CHECK(img[0] == 2.0f);
    CHECK(img[1] == 1.0f);
    CHECK(img[2] == 4.0f);
    CHECK(img[3] == 3.0f);

    // pad+crop at the neutral offset is the identity
    Tensor<float> src(Shape{1, 1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) src[i] = float(i);
    Tensor<float> dst(Shape{1, 1, 3, 3});
    pad_crop(src.data(), 1, 3, 3, 2, 3, 2, 2, dst.data());
    for (std::size_t i = 0; i < 9; ++i) CHECK(dst[i] == src[i]);
    // shifted crop pulls in zero padding
    pad_crop(src.data(), 1, 3, 3, 2, 3, 0, 2, dst.data());
    CHECK(dst[0] == 0.0f);

    // disabled augmentation leaves the batch untouched
    ImageBatch batch;
    batch.pixels = Tensor<float>(Shape{2, 1, 3, 3}, 0.5f);
    batch.labels = {0, 1};
    Rng rng(1);
    augment_batch(batch, AugmentSpec{}, rng);
    for (float v : batch.pixels.vec()) CHECK(v == 0.5f);
}

TEST_CASE("epoch batches partition the dataset") {
    Rng rng(5);
    auto batches = epoch_batches(23, 5, rng);
    CHECK(batches.size() == 5);
    std::vector<int> seen(23, 0);
    for (const auto& b : batches)
        for (int i : b) seen[std::size_t(i)]++;
    for (int c : seen) CHECK(c == 1);

    Rng r2(5);
    auto again = epoch_batches(23, 5, r2);
    CHECK(again == batches);
}

TEST_CASE("eval subsample is a sorted deterministic subset") {
    auto idx = subsample_indices(100, 30, 9);
    CHECK(idx.size() == 30);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    CHECK(idx == subsample_indices(100, 30, 9));
    CHECK(idx != subsample_indices(100, 30, 10));
    CHECK(subsample_indices(10, 50, 1).size() == 10);
}

TEST_CASE("config parsing: defaults, round trip, rejection") {
    RunConfig def = parse_config("{}");
    CHECK(def.train.weights.alpha == 5.0);
    CHECK(def.train.weights.beta == 3.0);
    CHECK(def.train.budget.epsilon == doctest::Approx(8.0 / 255.0));
    CHECK(def.train.optimizer.momentum == 0.9);
    CHECK(def.train.optimizer.weight_decay == 2e-4);
    CHECK(def.train.optimizer.initial_lr == 1e-2);
    CHECK(def.train.optimizer.lr_drop_epochs == std::vector<int>{15, 25});
    CHECK(def.train.epochs == 30);
    CHECK(def.train.trades_lambda == 6.0);

    // serialize -> parse is a fixed point
    RunConfig back = parse_config(serialize_config(def));
    CHECK(config_digest(back) == config_digest(def));

    CHECK_THROWS_WITH_AS(parse_config("{\"bogus\": 1}"),
                         doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("{\"train\": {\"alpha\": 1}}"),
                         doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"train\": {\"epochs\": \"many\"}}"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);
    CHECK_THROWS_AS(
        parse_config("{\"train\": {\"budget\": {\"epsilon\": -0.1}}}"),
        ConfigError);
    CHECK_THROWS_AS(
        parse_config("{\"train\": {\"variant\": \"unknown_variant\"}}"),
        ConfigError);

    // digest is sensitive to any field change
    RunConfig changed = def;
    changed.train.weights.alpha = 4.0;
    CHECK(config_digest(changed) != config_digest(def));
}

TEST_CASE("attack suite parsing") {
    RunConfig c = parse_config(R"({
      "eval": {"suite": [
        {"id": "pgd40", "objective": "cross_entropy", "scope": "full",
         "budget": {"epsilon": 0.03137254901960784, "step_size": 0.01,
                    "num_steps": 40}},
        {"id": "bpda", "objective": "cross_entropy", "scope": "full",
         "bpda": true},
        {"id": "feat", "objective": "feature_distance", "scope": "full",
         "tap": "stage3"}
      ]}
    })");
    REQUIRE(c.eval.suite.size() == 3);
    CHECK(c.eval.suite[0].budget.num_steps == 40);
    CHECK(c.eval.suite[0].budget.epsilon == doctest::Approx(8.0 / 255.0));
    CHECK(c.eval.suite[0].budget.step_size == doctest::Approx(0.01));
    CHECK(c.eval.suite[1].bpda);
    CHECK(c.eval.suite[2].tap->layer == "stage3");

    CHECK_THROWS_AS(parse_config(
                        R"({"eval": {"suite": [{"objective": "dlr",
                            "scope": "oblivious", "bpda": true}]}})"),
                    ConfigError);
}

TEST_CASE("overrides rewrite nested keys") {
    nlohmann::json base = nlohmann::json::parse(serialize_config(RunConfig{}));
    auto j = apply_override(base, "train.weights.alpha=7.5");
    RunConfig c = parse_config(j.dump());
    CHECK(c.train.weights.alpha == 7.5);
    j = apply_override(j, "dataset.source=synthetic");
    CHECK(parse_config(j.dump()).dataset.source == DataSource::synthetic);
    CHECK_THROWS_AS(apply_override(base, "no_equals_sign"), ConfigError);
}

TEST_CASE("train config validation") {
    TrainConfig t;
    t.epochs = 10;
    t.optimizer.lr_drop_epochs = {15};
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t.optimizer.lr_drop_epochs = {5, 5};
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t.optimizer.lr_drop_epochs = {4, 8};
    t.validate();
}
