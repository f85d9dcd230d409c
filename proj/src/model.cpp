#include "bdl/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "bdl/bdtf.hpp"
#include "bdl/rng.hpp"

namespace bdl {

void ClassifierSpec::validate() const {
  if (height == 0 || width == 0 || hidden_dim == 0 || n_classes == 0) {
    throw std::invalid_argument("classifier: all extents must be positive");
  }
  if (conv.empty()) throw std::invalid_argument("classifier: need at least one conv block");
  for (const auto& b : conv) {
    if (b.filters == 0) throw std::invalid_argument("classifier: conv filters must be positive");
    if (b.kernel != 3 && b.kernel != 5) throw std::invalid_argument("classifier: conv kernel must be 3 or 5");
    if (b.stride != 1 && b.stride != 2) throw std::invalid_argument("classifier: conv stride must be 1 or 2");
  }
}

std::vector<ConvBlock> ClassifierSpec::parse_conv(const std::string& text) {
  std::vector<ConvBlock> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    ConvBlock b;
    char x1 = 0, x2 = 0;
    std::istringstream ts(tok);
    if (!(ts >> b.filters >> x1 >> b.kernel >> x2 >> b.stride) || x1 != 'x' || x2 != 'x' || !ts.eof()) {
      throw std::invalid_argument("classifier: bad conv block '" + tok + "', expected FILTERSxKERNELxSTRIDE");
    }
    out.push_back(b);
  }
  return out;
}

std::string ClassifierSpec::format_conv(const std::vector<ConvBlock>& blocks) {
  std::ostringstream os;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) os << ' ';
    os << blocks[i].filters << 'x' << blocks[i].kernel << 'x' << blocks[i].stride;
  }
  return os.str();
}

std::string ClassifierSpec::to_text() const {
  std::ostringstream os;
  os << "height = " << height << '\n'
     << "width = " << width << '\n'
     << "conv = " << format_conv(conv) << '\n'
     << "hidden_dim = " << hidden_dim << '\n'
     << "n_classes = " << n_classes << '\n';
  return os.str();
}

ClassifierSpec ClassifierSpec::from_text(const std::string& text) {
  ClassifierSpec s;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (line.empty() || eq == std::string::npos) continue;
    auto trim = [](std::string v) {
      const auto a = v.find_first_not_of(" \t");
      const auto b = v.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : v.substr(a, b - a + 1);
    };
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    if (key == "height") s.height = std::stoul(val);
    else if (key == "width") s.width = std::stoul(val);
    else if (key == "conv") s.conv = parse_conv(val);
    else if (key == "hidden_dim") s.hidden_dim = std::stoul(val);
    else if (key == "n_classes") s.n_classes = std::stoul(val);
  }
  s.validate();
  return s;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected (b, n), got " + shape_str(logits.shape()));
  const auto b = logits.dim(0), n = logits.dim(1);
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (logits[i * n + j] > logits[i * n + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------

Classifier::Classifier(ClassifierSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(hash_seed(seed, "init"));
  auto normal = [&rng](Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<float>(rng.normal() * stddev);
    return t;
  };
  std::size_t cin = 3;
  for (std::size_t i = 0; i < spec_.conv.size(); ++i) {
    const auto& b = spec_.conv[i];
    const double fan_in = static_cast<double>(b.kernel * b.kernel * cin);
    params_.push_back({"conv" + std::to_string(i) + ".weight", normal({b.kernel, b.kernel, cin, b.filters}, std::sqrt(2.0 / fan_in))});
    params_.push_back({"conv" + std::to_string(i) + ".bias", Tensor({b.filters}, 0.0f)});
    cin = b.filters;
  }
  params_.push_back({"hidden.weight", normal({cin, spec_.hidden_dim}, std::sqrt(2.0 / static_cast<double>(cin)))});
  params_.push_back({"hidden.bias", Tensor({spec_.hidden_dim}, 0.0f)});
  params_.push_back({"head.weight", normal({spec_.hidden_dim, spec_.n_classes},
                                           std::sqrt(1.0 / static_cast<double>(spec_.hidden_dim)))});
  params_.push_back({"head.bias", Tensor({spec_.n_classes}, 0.0f)});
}

Classifier::Classifier(ClassifierSpec spec, std::vector<Parameter> params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  const Classifier reference(spec_, 0);
  if (reference.params_.size() != params_.size()) {
    throw std::invalid_argument("classifier: expected " + std::to_string(reference.params_.size()) +
                                " parameters, got " + std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& want = reference.params_[i];
    if (params_[i].name != want.name || params_[i].value.shape() != want.value.shape()) {
      throw ShapeError("classifier: parameter " + std::to_string(i) + " is '" + params_[i].name + "' " +
                       shape_str(params_[i].value.shape()) + ", expected '" + want.name + "' " +
                       shape_str(want.value.shape()));
    }
  }
}

std::vector<Var> Classifier::bind(Tape& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
  return vars;
}

void Classifier::check_batch(const Tensor& batch) const {
  const auto& s = batch.shape();
  if (s.size() != 4 || s[1] != spec_.height || s[2] != spec_.width || s[3] != 3) {
    throw ShapeError("classifier: batch shape " + shape_str(s) + " does not match input (b, " +
                     std::to_string(spec_.height) + ", " + std::to_string(spec_.width) + ", 3)");
  }
}

Var Classifier::hidden(std::span<const Var> p, const Var& batch) const {
  check_batch(batch.value());
  if (p.size() != params_.size()) throw std::invalid_argument("classifier: wrong number of bound parameters");
  Var x = batch;
  std::size_t k = 0;
  for (const auto& b : spec_.conv) {
    x = relu(conv2d(x, p[k], p[k + 1], {b.stride, Padding::same}));
    k += 2;
  }
  x = global_avg_pool(x);
  return relu(add_bias(matmul(x, p[k]), p[k + 1]));
}

Var Classifier::head(std::span<const Var> p, const Var& h) const {
  const auto k = params_.size() - 2;
  return add_bias(matmul(h, p[k]), p[k + 1]);
}

Var Classifier::logits(std::span<const Var> p, const Var& batch) const { return head(p, hidden(p, batch)); }

Tensor Classifier::forward_hidden(const Tensor& batch) const {
  Tape tape;
  const auto p = bind(tape, false);
  return hidden(p, tape.constant(batch)).value();
}

Tensor Classifier::forward_logits(const Tensor& batch) const {
  Tape tape;
  const auto p = bind(tape, false);
  return logits(p, tape.constant(batch)).value();
}

std::vector<int> Classifier::predict(const Tensor& batch) const { return argmax_rows(forward_logits(batch)); }

void Classifier::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "model.txt");
  if (!os) throw std::runtime_error("checkpoint: cannot write " + (dir / "model.txt").string());
  os << spec_.to_text();
  for (const auto& p : params_) {
    os << "param = " << p.name << '\n';
    save_bdtf(dir / (p.name + ".bdtf"), p.value);
  }
}

Classifier Classifier::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "model.txt");
  if (!is) throw std::runtime_error("checkpoint: no model.txt in " + dir.string());
  std::stringstream buf;
  buf << is.rdbuf();
  const auto text = buf.str();
  auto spec = ClassifierSpec::from_text(text);
  std::vector<Parameter> params;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.rfind("param = ", 0) != 0) continue;
    auto name = line.substr(8);
    params.push_back({name, load_bdtf(dir / (name + ".bdtf"))});
  }
  return Classifier(std::move(spec), std::move(params));
}

}  // namespace bdl
