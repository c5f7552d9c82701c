#include <fstream>
#include <sstream>

#include "sslcrop/error.hpp"
#include "sslcrop/model.hpp"
#include "sslcrop/text.hpp"

namespace sslcrop::nn {
namespace {

constexpr std::string_view kMagic = "sslcrop-checkpoint 1";

void write_tensor(std::ostream& out, std::string_view kind, const std::string& name,
                  const ad::Tensor& t) {
  out << kind << ' ' << name << ' ';
  for (std::size_t i = 0; i < t.shape().size(); ++i) out << (i ? "x" : "") << t.shape()[i];
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << format_double(t[i]);
  out << '\n';
}

std::size_t to_size(std::string_view s, std::size_t line) {
  const auto v = parse_int(s);
  if (!v || *v < 0) throw ParseError(line, "expected a non-negative integer, got '" + std::string(s) + "'");
  return static_cast<std::size_t>(*v);
}

std::vector<std::string_view> fields(std::string_view line) {
  std::vector<std::string_view> out;
  for (auto f : split(line, ' ')) {
    if (!f.empty()) out.push_back(f);
  }
  return out;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  state.validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const auto& e = state.encoder;
  const auto& h = state.heads;
  out << kMagic << '\n';
  out << "encoder " << e.d_model << ' ' << e.n_heads << ' ' << e.n_layers << ' ' << e.ff_dim << ' '
      << e.n_bands << ' ' << e.n_steps << '\n';
  out << "heads " << h.proj_hidden << ' ' << h.head_out << ' ' << h.pred_hidden << ' '
      << (h.batch_norm ? "bn" : "plain") << '\n';
  for (const auto& [name, t] : state.params) write_tensor(out, "param", name, t);
  for (const auto& [name, t] : state.momentum) write_tensor(out, "momentum", name, t);
  for (const auto& [name, t] : state.buffers) write_tensor(out, "buffer", name, t);
  out << "end\n";
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> std::string_view {
    if (!std::getline(in, line)) throw ParseError(lineno + 1, "unexpected end of checkpoint");
    ++lineno;
    return line;
  };

  if (next() != kMagic) throw ParseError(1, "not a checkpoint (bad magic line)");
  ModelState state;
  {
    const auto f = fields(next());
    if (f.size() != 7 || f[0] != "encoder") throw ParseError(lineno, "expected encoder line");
    auto& e = state.encoder;
    e.d_model = to_size(f[1], lineno);
    e.n_heads = to_size(f[2], lineno);
    e.n_layers = to_size(f[3], lineno);
    e.ff_dim = to_size(f[4], lineno);
    e.n_bands = to_size(f[5], lineno);
    e.n_steps = to_size(f[6], lineno);
  }
  {
    const auto f = fields(next());
    if (f.size() != 5 || f[0] != "heads" || (f[4] != "bn" && f[4] != "plain")) {
      throw ParseError(lineno, "expected 'heads <proj_hidden> <head_out> <pred_hidden> bn|plain'");
    }
    state.heads = {to_size(f[1], lineno), to_size(f[2], lineno), to_size(f[3], lineno), f[4] == "bn"};
  }
  for (;;) {
    std::vector<std::string> header;
    for (auto f : fields(next())) header.emplace_back(f);
    if (header.size() == 1 && header[0] == "end") break;
    if (header.size() != 3 ||
        (header[0] != "param" && header[0] != "momentum" && header[0] != "buffer")) {
      throw ParseError(lineno, "expected 'param|momentum|buffer <name> <shape>' or 'end'");
    }
    const std::size_t header_line = lineno;
    ad::Shape shape;
    for (auto d : split(header[2], 'x')) shape.push_back(to_size(d, header_line));
    std::vector<double> values;
    for (auto f : fields(next())) {
      const auto v = parse_double(f);
      if (!v) throw ParseError(lineno, "bad number '" + std::string(f) + "'");
      values.push_back(*v);
    }
    if (values.size() != ad::shape_size(shape)) {
      throw ParseError(lineno, "tensor " + header[1] + " has " +
                                   std::to_string(values.size()) + " values for shape " +
                                   ad::shape_string(shape));
    }
    auto& target = header[0] == "param"      ? state.params
                   : header[0] == "momentum" ? state.momentum
                                             : state.buffers;
    target[header[1]] = ad::Tensor(std::move(shape), std::move(values));
  }
  state.validate();
  return state;
}

}  // namespace sslcrop::nn
