#include "bdl/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "bdl/bdtf.hpp"
#include "bdl/rng.hpp"

namespace bdl {

std::string to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::square: return "square";
    case TriggerKind::random_square: return "random_square";
    case TriggerKind::sine: return "sine";
    case TriggerKind::low_variance: return "low_variance";
  }
  return "?";
}

TriggerKind parse_trigger_kind(const std::string& text) {
  if (text == "square") return TriggerKind::square;
  if (text == "random_square") return TriggerKind::random_square;
  if (text == "sine") return TriggerKind::sine;
  if (text == "low_variance") return TriggerKind::low_variance;
  throw std::invalid_argument("unknown trigger kind '" + text + "'");
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::size_t n_classes, std::vector<LabeledImage> images)
    : n_classes_(n_classes), images_(std::move(images)) {
  if (n_classes_ == 0) throw std::invalid_argument("dataset: n_classes must be positive");
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto& im = images_[i];
    if (im.label < 0 || static_cast<std::size_t>(im.label) >= n_classes_) {
      throw std::invalid_argument("dataset: image " + std::to_string(i) + " has label " + std::to_string(im.label) +
                                  " outside [0, " + std::to_string(n_classes_) + ")");
    }
    if (im.pixels.rank() != 3 || im.pixels.dim(2) != 3) {
      throw ShapeError("dataset: image " + std::to_string(i) + " has shape " + shape_str(im.pixels.shape()) +
                       ", expected (H, W, 3)");
    }
    if (im.pixels.shape() != images_[0].pixels.shape()) {
      throw ShapeError("dataset: image " + std::to_string(i) + " shape " + shape_str(im.pixels.shape()) +
                       " differs from " + shape_str(images_[0].pixels.shape()));
    }
    for (float v : im.pixels.data())
      if (!(v >= 0.0f && v <= 1.0f))
        throw std::invalid_argument("dataset: image " + std::to_string(i) + " has a pixel outside [0, 1]");
  }
}

Shape Dataset::image_shape() const { return images_.empty() ? Shape{} : images_[0].pixels.shape(); }

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(n_classes_, 0);
  for (const auto& im : images_) ++counts[static_cast<std::size_t>(im.label)];
  return counts;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(images_.size());
  for (const auto& im : images_) out.push_back(im.label);
  return out;
}

Tensor stack_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack_batch: empty selection");
  Shape shape = data.image_shape();
  const auto per = shape_numel(shape);
  shape.insert(shape.begin(), indices.size());
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& px = data[indices[i]].pixels;
    std::copy(px.data().begin(), px.data().end(), out.raw() + i * per);
  }
  return out;
}

Tensor stack_all(const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return stack_batch(data, idx);
}

// ---------------------------------------------------------------------------
// CIFAR-10

Dataset parse_cifar10(std::span<const unsigned char> bytes, std::uint64_t first_id) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw std::invalid_argument("cifar10: byte length " + std::to_string(bytes.size()) +
                                " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  const std::size_t plane = kCifarSide * kCifarSide;
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  std::vector<LabeledImage> images;
  images.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw std::invalid_argument("cifar10: record " + std::to_string(r) + " has label byte " +
                                  std::to_string(rec[0]));
    }
    Tensor px({kCifarSide, kCifarSide, 3});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) px[p * 3 + c] = static_cast<float>(rec[1 + c * plane + p]) / 255.0f;
    images.push_back(LabeledImage{std::move(px), rec[0], first_id + r, {}});
  }
  return Dataset(10, std::move(images));
}

Dataset load_cifar10(const std::filesystem::path& path, std::uint64_t first_id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cifar10: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_cifar10(bytes, first_id);
}

Dataset select_classes(const Dataset& data, std::span<const int> classes) {
  if (classes.empty()) throw std::invalid_argument("select_classes: empty class list");
  std::map<int, int> remap;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || static_cast<std::size_t>(classes[i]) >= data.n_classes()) {
      throw std::invalid_argument("select_classes: class " + std::to_string(classes[i]) + " not in dataset");
    }
    if (!remap.emplace(classes[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("select_classes: class " + std::to_string(classes[i]) + " listed twice");
    }
  }
  std::vector<LabeledImage> out;
  for (const auto& im : data.images()) {
    auto it = remap.find(im.label);
    if (it == remap.end()) continue;
    auto copy = im;
    copy.label = it->second;
    out.push_back(std::move(copy));
  }
  return Dataset(classes.size(), std::move(out));
}

Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: nothing to concatenate");
  std::vector<LabeledImage> out;
  std::unordered_map<std::uint64_t, bool> seen;
  for (const auto& p : parts) {
    if (p.n_classes() != parts[0].n_classes()) throw std::invalid_argument("concat: class counts differ");
    for (const auto& im : p.images()) {
      if (!seen.emplace(im.id, true).second) throw std::invalid_argument("concat: duplicate id " + std::to_string(im.id));
      out.push_back(im);
    }
  }
  return Dataset(parts[0].n_classes(), std::move(out));
}

// ---------------------------------------------------------------------------
// synthetic

namespace {

// Light gray plus a small tint along evenly spaced hue directions. The tint components
// sum to zero, so brightness jitter never moves an image toward another class.
std::array<float, 3> class_color(std::size_t k, std::size_t n) {
  constexpr double kGray = 0.8;
  constexpr double kTint = 0.06;
  constexpr double kThird = 2.0943951023931957;
  const double h = 6.283185307179586 * static_cast<double>(k) / static_cast<double>(n);
  return {static_cast<float>(kGray + kTint * std::cos(h)), static_cast<float>(kGray + kTint * std::cos(h - kThird)),
          static_cast<float>(kGray + kTint * std::cos(h + kThird))};
}

}  // namespace

Dataset synth_generate(std::size_t n_classes, std::size_t per_class, std::size_t height, std::size_t width,
                       std::uint64_t seed) {
  if (n_classes == 0 || per_class == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("synth_generate: all arguments must be positive");
  }
  constexpr double kPixelNoise = 0.05;
  constexpr double kImageJitter = 0.1;
  Rng rng(hash_seed(seed, "synth"));
  std::vector<LabeledImage> images;
  images.reserve(n_classes * per_class);
  std::uint64_t id = 0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    const auto base = class_color(k, n_classes);
    for (std::size_t i = 0; i < per_class; ++i) {
      Tensor px({height, width, 3});
      const double jitter = rng.uniform(-kImageJitter, kImageJitter);
      for (std::size_t p = 0; p < height * width; ++p)
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = base[c] + jitter + rng.uniform(-kPixelNoise, kPixelNoise);
          px[p * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      images.push_back(LabeledImage{std::move(px), static_cast<int>(k), id++, {}});
    }
  }
  return Dataset(n_classes, std::move(images));
}

// ---------------------------------------------------------------------------
// tensor directories

void save_tensor_dir(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw std::runtime_error("tensor_dir: cannot write manifest in " + dir.string());
  for (const auto& im : data.images()) {
    const std::string name = std::to_string(im.id) + ".bdtf";
    save_bdtf(dir / name, im.pixels);
    manifest << im.id << '\t' << name << '\t' << im.label << '\n';
  }
}

Dataset load_tensor_dir(const std::filesystem::path& dir, std::size_t n_classes) {
  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw std::runtime_error("tensor_dir: no manifest.tsv in " + dir.string());
  std::vector<LabeledImage> images;
  std::string line;
  std::size_t lineno = 0;
  int max_label = -1;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id_text, name, label_text;
    if (!std::getline(ls, id_text, '\t') || !std::getline(ls, name, '\t') || !std::getline(ls, label_text)) {
      throw std::invalid_argument("tensor_dir: malformed manifest line " + std::to_string(lineno));
    }
    LabeledImage im;
    try {
      im.id = std::stoull(id_text);
      im.label = std::stoi(label_text);
    } catch (const std::exception&) {
      throw std::invalid_argument("tensor_dir: malformed manifest line " + std::to_string(lineno));
    }
    im.pixels = load_bdtf(dir / name);
    for (float v : im.pixels.data())
      if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("tensor_dir: " + name + " has pixels outside [0,1]");
    max_label = std::max(max_label, im.label);
    images.push_back(std::move(im));
  }
  if (n_classes == 0) n_classes = static_cast<std::size_t>(max_label + 1);
  return Dataset(n_classes, std::move(images));
}

// ---------------------------------------------------------------------------
// partitioning

std::vector<std::size_t> largest_remainder(std::span<const double> quotas, std::size_t total) {
  constexpr double kSlack = 1e-9;
  std::vector<std::size_t> counts(quotas.size());
  std::vector<double> rem(quotas.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    if (quotas[i] < 0.0) throw std::invalid_argument("largest_remainder: negative quota");
    const double fl = std::floor(quotas[i] + kSlack);
    counts[i] = static_cast<std::size_t>(fl);
    rem[i] = std::max(0.0, quotas[i] - fl);
    assigned += counts[i];
  }
  if (assigned > total) throw std::invalid_argument("largest_remainder: quotas exceed total");
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  const std::size_t leftover = total - assigned;
  if (leftover > order.size()) throw std::invalid_argument("largest_remainder: quotas fall short of total");
  for (std::size_t i = 0; i < leftover; ++i) ++counts[order[i]];
  return counts;
}

PartitionBundle partition(const Dataset& data, PartitionFractions fr, std::uint64_t seed) {
  const double sum = fr.poison + fr.clean + fr.adv;
  if (std::fabs(sum - 1.0) > 1e-9) throw std::invalid_argument("partition: fractions sum to " + std::to_string(sum));
  if (fr.poison < 0 || fr.clean < 0 || fr.adv < 0 || !(fr.inner_split > 0.0 && fr.inner_split < 1.0)) {
    throw std::invalid_argument("partition: fractions must be non-negative and inner_split in (0,1)");
  }
  const auto counts = data.class_counts();
  std::vector<std::vector<std::size_t>> by_class(data.n_classes());
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data[i].label)].push_back(i);

  std::vector<LabeledImage> parts[5];
  for (std::size_t c = 0; c < data.n_classes(); ++c) {
    const auto n = counts[c];
    if (n < 20) {
      throw std::invalid_argument("partition: class " + std::to_string(c) + " has " + std::to_string(n) +
                                  " images, need at least 20");
    }
    auto& members = by_class[c];
    Rng rng(mix64(hash_seed(seed, "partition"), c));
    rng.shuffle(std::span<std::size_t>(members));

    const double nd = static_cast<double>(n);
    const std::array<double, 3> top{nd * fr.poison, nd * fr.clean, nd * fr.adv};
    const auto top_counts = largest_remainder(top, n);
    std::array<std::size_t, 5> sizes{};
    for (std::size_t k = 0; k < 2; ++k) {
      const double m = static_cast<double>(top_counts[k]);
      const std::array<double, 2> inner{m * fr.inner_split, m * (1.0 - fr.inner_split)};
      const auto ic = largest_remainder(inner, top_counts[k]);
      sizes[2 * k] = ic[0];
      sizes[2 * k + 1] = ic[1];
    }
    sizes[4] = top_counts[2];
    std::size_t pos = 0;
    for (std::size_t k = 0; k < 5; ++k)
      for (std::size_t j = 0; j < sizes[k]; ++j) parts[k].push_back(data[members[pos++]]);
  }
  const auto nc = data.n_classes();
  return PartitionBundle{Dataset(nc, std::move(parts[0])), Dataset(nc, std::move(parts[1])),
                         Dataset(nc, std::move(parts[2])), Dataset(nc, std::move(parts[3])),
                         Dataset(nc, std::move(parts[4])), fr, seed};
}

namespace {

constexpr const char* kPartNames[5] = {"poison_train", "poison_val", "clean_train", "clean_val", "adv_test"};

}  // namespace

void save_partition_manifest(const PartitionBundle& b, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("partition: cannot write " + path.string());
  os.precision(17);
  os << "# bdl partition manifest v1\n";
  os << "seed " << b.seed << '\n';
  os << "fractions " << b.fractions.poison << ' ' << b.fractions.clean << ' ' << b.fractions.adv << '\n';
  os << "inner_split " << b.fractions.inner_split << '\n';
  const Dataset* parts[5] = {&b.poison_train, &b.poison_val, &b.clean_train, &b.clean_val, &b.adv_test};
  for (std::size_t k = 0; k < 5; ++k) {
    os << kPartNames[k];
    for (const auto& im : parts[k]->images()) os << ' ' << im.id;
    os << '\n';
  }
}

PartitionBundle load_partition_manifest(const Dataset& data, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("partition: cannot read " + path.string());
  std::unordered_map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < data.size(); ++i) index.emplace(data[i].id, i);

  PartitionBundle b;
  std::vector<LabeledImage> parts[5];
  bool seen[5] = {};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") {
      ls >> b.seed;
    } else if (key == "fractions") {
      ls >> b.fractions.poison >> b.fractions.clean >> b.fractions.adv;
    } else if (key == "inner_split") {
      ls >> b.fractions.inner_split;
    } else {
      auto it = std::find(std::begin(kPartNames), std::end(kPartNames), key);
      if (it == std::end(kPartNames)) throw std::invalid_argument("partition manifest: unknown key '" + key + "'");
      const auto k = static_cast<std::size_t>(it - std::begin(kPartNames));
      seen[k] = true;
      std::uint64_t id;
      while (ls >> id) {
        auto f = index.find(id);
        if (f == index.end()) throw std::invalid_argument("partition manifest: id " + std::to_string(id) + " not in dataset");
        parts[k].push_back(data[f->second]);
      }
    }
    if (ls.fail() && !ls.eof()) throw std::invalid_argument("partition manifest: malformed line '" + line + "'");
  }
  for (std::size_t k = 0; k < 5; ++k)
    if (!seen[k]) throw std::invalid_argument(std::string("partition manifest: missing ") + kPartNames[k]);
  const auto nc = data.n_classes();
  b.poison_train = Dataset(nc, std::move(parts[0]));
  b.poison_val = Dataset(nc, std::move(parts[1]));
  b.clean_train = Dataset(nc, std::move(parts[2]));
  b.clean_val = Dataset(nc, std::move(parts[3]));
  b.adv_test = Dataset(nc, std::move(parts[4]));
  return b;
}

}  // namespace bdl
