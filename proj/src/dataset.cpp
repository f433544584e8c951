#include "authlock/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "authlock/error.hpp"

namespace authlock {

int random_wrong_label(int true_label, int num_classes, Rng& rng) {
  if (num_classes < 2) throw InvalidArgument("at least two classes are needed for a wrong label");
  std::uniform_int_distribution<int> pick(0, num_classes - 2);
  const int draw = pick(rng);
  return draw >= true_label ? draw + 1 : draw;
}

void CompositeDataset::resample_rand_labels(Rng& rng) {
  for (std::size_t i = 0; i < rand_items.size(); ++i) {
    rand_items[i].label = random_wrong_label(rand_true_labels[i], num_classes, rng);
  }
}

CompositeDataset build_composite(std::span<const LabeledImage> base_train, const TriggerSpec& spec,
                                 int num_classes, std::uint64_t seed, double auth_fraction,
                                 std::string origin) {
  if (base_train.empty()) throw InvalidArgument("build_composite: empty base dataset");
  if (num_classes < 2) throw InvalidArgument("build_composite: K < 2 leaves no incorrect label");
  if (!(auth_fraction > 0.0 && auth_fraction <= 1.0)) {
    throw InvalidArgument("build_composite: auth_fraction must lie in (0, 1]");
  }
  CompositeDataset out;
  out.origin = std::move(origin);
  out.seed = seed;
  out.num_classes = num_classes;

  Rng rng(seed);
  std::vector<std::size_t> order(base_train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto n_auth = static_cast<std::size_t>(
      std::max(1.0, std::round(auth_fraction * static_cast<double>(base_train.size()))));
  if (n_auth < base_train.size()) std::shuffle(order.begin(), order.end(), rng);
  order.resize(n_auth);
  std::sort(order.begin(), order.end());

  out.auth_items.reserve(order.size());
  for (auto idx : order) {
    const auto& item = base_train[idx];
    if (item.label < 0 || item.label >= num_classes) throw InvalidArgument("label out of range");
    out.auth_items.push_back({apply_hw_trigger(item.pixels, spec), item.label});
  }
  out.rand_items.reserve(base_train.size());
  out.rand_true_labels.reserve(base_train.size());
  for (const auto& item : base_train) {
    if (item.label < 0 || item.label >= num_classes) throw InvalidArgument("label out of range");
    out.rand_items.push_back({item.pixels, random_wrong_label(item.label, num_classes, rng)});
    out.rand_true_labels.push_back(item.label);
  }
  return out;
}

Dataset make_authorized_testset(std::span<const LabeledImage> base_test, const TriggerSpec& spec) {
  Dataset out;
  out.reserve(base_test.size());
  for (const auto& item : base_test) out.push_back({apply_hw_trigger(item.pixels, spec), item.label});
  return out;
}

void add_gaussian_noise(std::span<float> values, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw InvalidArgument("noise sigma must be non-negative");
  if (sigma == 0.0) return;
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& v : values) v = static_cast<float>(v + normal(rng));
}

Image gaussian_augment(const Image& x, double sigma, Rng& rng) {
  Image out = x;
  add_gaussian_noise(out.values(), sigma, rng);
  return out;
}

Dataset load_cifar10_batch(const std::filesystem::path& file) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  constexpr std::size_t kRecord = 1 + kPixels;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 batch " + file.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes == 0 || bytes % kRecord != 0) {
    throw IoError("truncated CIFAR-10 batch " + file.string() + " (" + std::to_string(bytes) +
                  " bytes is not a multiple of 3073)");
  }
  in.seekg(0);
  std::vector<unsigned char> raw(bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + file.string());

  Dataset out;
  out.reserve(bytes / kRecord);
  for (std::size_t r = 0; r < bytes / kRecord; ++r) {
    const unsigned char* rec = raw.data() + r * kRecord;
    if (rec[0] > 9) throw IoError(file.string() + ": label byte out of range in record " + std::to_string(r));
    std::vector<float> values(kPixels);
    for (std::size_t k = 0; k < kPixels; ++k) values[k] = static_cast<float>(rec[1 + k]) / 255.0f;
    out.push_back({Image({3, 32, 32}, std::move(values)), static_cast<int>(rec[0])});
  }
  return out;
}

DataSplit load_cifar10(const std::filesystem::path& dir) {
  DataSplit split;
  for (int b = 1; b <= 5; ++b) {
    auto part = load_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    std::move(part.begin(), part.end(), std::back_inserter(split.train));
  }
  split.test = load_cifar10_batch(dir / "test_batch.bin");
  return split;
}

namespace {

struct Blob {
  double row, col, radius;
  std::vector<double> color;
  double amplitude;
};

Blob random_blob(const SynthParams& p, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Blob blob;
  blob.row = unit(rng) * (p.shape.height - 1);
  blob.col = unit(rng) * (p.shape.width - 1);
  blob.radius = (0.12 + 0.16 * unit(rng)) * std::min(p.shape.height, p.shape.width);
  blob.color.resize(p.shape.channels);
  for (auto& c : blob.color) c = unit(rng) * 2.0 - 1.0;
  blob.amplitude = 0.25 + 0.2 * unit(rng);
  return blob;
}

std::vector<std::vector<Blob>> make_prototypes(const SynthParams& p, Rng& rng) {
  std::vector<std::vector<Blob>> protos(p.num_classes);
  for (auto& blobs : protos) {
    for (int b = 0; b < p.blobs; ++b) blobs.push_back(random_blob(p, rng));
  }
  return protos;
}

Image render(const std::vector<Blob>& blobs, const Shape& shape) {
  Image img(shape, 0.5f);
  for (int c = 0; c < shape.channels; ++c) {
    for (int i = 0; i < shape.height; ++i) {
      for (int j = 0; j < shape.width; ++j) {
        double v = 0.5;
        for (const auto& b : blobs) {
          const double d2 = (i - b.row) * (i - b.row) + (j - b.col) * (j - b.col);
          v += b.amplitude * b.color[c] * std::exp(-d2 / (2.0 * b.radius * b.radius));
        }
        img.at(c, i, j) = static_cast<float>(v);
      }
    }
  }
  return img;
}

Dataset sample_split(const std::vector<std::vector<Blob>>& protos, const SynthParams& p, int n, Rng& rng) {
  const int k = static_cast<int>(protos.size());
  std::vector<Image> rendered;
  for (const auto& b : protos) rendered.push_back(render(b, p.shape));
  const bool per_sample = p.jitter > 0 || p.distractors > 0;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> contrast(0.8, 1.2);
  std::uniform_int_distribution<int> shift(-p.jitter, p.jitter);
  Dataset out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int label = i % k;
    Image img;
    if (per_sample) {
      auto blobs = protos[label];
      const int dy = shift(rng), dx = shift(rng);
      for (auto& b : blobs) {
        b.row += dy;
        b.col += dx;
      }
      for (int d = 0; d < p.distractors; ++d) blobs.push_back(random_blob(p, rng));
      img = render(blobs, p.shape);
    } else {
      img = rendered[label];
    }
    const double a = contrast(rng);
    for (auto& v : img.values()) {
      const double s = 0.5 + a * (v - 0.5) + p.noise * normal(rng);
      v = static_cast<float>(std::clamp(s, 0.0, 1.0));
    }
    out.push_back({std::move(img), label});
  }
  return out;
}

}  // namespace

DataSplit synth_dataset(const SynthParams& p) {
  if (p.n_train <= 0 || p.n_test < 0) throw InvalidArgument("synth_dataset: sizes must be positive");
  if (p.num_classes < 2) throw InvalidArgument("synth_dataset: K must be at least 2");
  if (p.shape.channels <= 0 || p.shape.height <= 0 || p.shape.width <= 0 || p.blobs <= 0) {
    throw InvalidArgument("synth_dataset: invalid image shape or blob count");
  }
  if (p.jitter < 0 || p.distractors < 0) throw InvalidArgument("synth_dataset: jitter and distractors must be non-negative");
  if (!(p.noise >= 0.0)) throw InvalidArgument("synth_dataset: noise must be non-negative");
  Rng rng(p.seed);
  const auto protos = make_prototypes(p, rng);
  Rng train_rng(p.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng test_rng(p.seed ^ 0xc2b2ae3d27d4eb4fULL);
  return DataSplit{sample_split(protos, p, p.n_train, train_rng),
                   sample_split(protos, p, p.n_test, test_rng)};
}

Dataset take_subset(std::span<const LabeledImage> data, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(n, data.size()));
  Dataset out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(data[i]);
  return out;
}

std::vector<Image> images_of(std::span<const LabeledImage> data) {
  std::vector<Image> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back(d.pixels);
  return out;
}

std::vector<int> labels_of(std::span<const LabeledImage> data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& d : data) out.push_back(d.label);
  return out;
}

}  // namespace authlock
