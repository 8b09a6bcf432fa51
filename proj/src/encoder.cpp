#include "clear/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace clear {

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

double gelu(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluScale * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void AdapterParams::validate() const {
  if (w1.rows != static_cast<int>(b1.size()) || w2.rows != static_cast<int>(b2.size()) ||
      w1.rows != w2.cols || w1.cols != w2.rows)
    throw ShapeError("adapter parameter shapes are inconsistent");
  if (w1.cols != w2.rows) throw ShapeError("adapter requires input_dim == output_dim");
}

AdapterParams init_params(int d_in, int hidden, Rng rng) {
  if (d_in < 1 || hidden < 1) throw ConfigError("init_params: dims must be >= 1");
  AdapterParams p;
  p.w1 = Matrix(hidden, d_in);
  p.b1.assign(hidden, 0.0);
  p.w2 = Matrix(d_in, hidden);
  p.b2.assign(d_in, 0.0);
  p.alpha = 1.0;

  Rng r1 = rng.substream("w1");
  const double bound1 = std::sqrt(6.0 / (d_in + hidden));
  for (double& v : p.w1.data) v = (2.0 * r1.next_double() - 1.0) * bound1;

  Rng r2 = rng.substream("w2");
  const double bound2 = std::sqrt(6.0 / (hidden + d_in));
  for (double& v : p.w2.data) v = (2.0 * r2.next_double() - 1.0) * bound2;
  return p;
}

namespace {

struct ForwardCache {
  Matrix z;        // n x H pre-activation
  Matrix h;        // n x H gelu(z)
  Matrix v;        // n x D pre-normalization output
  Vec norms;       // per-row norms of v
  Matrix y;        // n x D unit rows
};

ForwardCache forward_cache(const AdapterParams& p, const Matrix& x) {
  if (x.cols != p.input_dim()) throw ShapeError("encode_batch: feature dim mismatch");
  ForwardCache c;
  c.z = matmul_nt(x, p.w1);  // n x H
  for (int i = 0; i < c.z.rows; ++i)
    for (int j = 0; j < c.z.cols; ++j) c.z.at(i, j) += p.b1[j];
  c.h = Matrix(c.z.rows, c.z.cols);
  for (std::size_t k = 0; k < c.z.data.size(); ++k) c.h.data[k] = gelu(c.z.data[k]);
  c.v = matmul_nt(c.h, p.w2);  // n x D
  for (int i = 0; i < c.v.rows; ++i)
    for (int j = 0; j < c.v.cols; ++j) c.v.at(i, j) += p.b2[j] + p.alpha * x.at(i, j);
  c.norms.resize(c.v.rows);
  c.y = Matrix(c.v.rows, c.v.cols);
  for (int i = 0; i < c.v.rows; ++i) {
    const double n = l2_norm(c.v.row(i));
    if (n < 1e-12) throw ZeroVectorError("encode_batch: pre-normalization row norm below 1e-12");
    c.norms[i] = n;
    for (int j = 0; j < c.v.cols; ++j) c.y.at(i, j) = c.v.at(i, j) / n;
  }
  return c;
}

}  // namespace

Matrix encode_batch(const AdapterParams& params, const Matrix& x) {
  return forward_cache(params, x).y;
}

EncoderBackward encoder_backward(const AdapterParams& params, const Matrix& x,
                                 const Matrix& upstream) {
  ForwardCache c = forward_cache(params, x);
  if (!upstream.same_shape(c.y)) throw ShapeError("encoder_backward: upstream shape mismatch");
  const int n = x.rows, d = x.cols, h = params.hidden_dim();

  // Through y = v / |v|: g_v = (g_y - y * dot(y, g_y)) / |v|.
  Matrix g_v(n, d);
  for (int i = 0; i < n; ++i) {
    const double proj = dot(c.y.row(i), upstream.row(i));
    for (int j = 0; j < d; ++j)
      g_v.at(i, j) = (upstream.at(i, j) - c.y.at(i, j) * proj) / c.norms[i];
  }

  EncoderBackward out;
  out.param_grads.w1 = Matrix(h, d);
  out.param_grads.b1.assign(h, 0.0);
  out.param_grads.w2 = Matrix(d, h);
  out.param_grads.b2.assign(d, 0.0);
  out.param_grads.alpha = 0.0;

  // v = h W2^T + b2 + alpha x
  out.param_grads.w2 = matmul_tn(g_v, c.h);  // d x h
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.param_grads.b2[j] += g_v.at(i, j);
  for (int i = 0; i < n; ++i) out.param_grads.alpha += dot(x.row(i), g_v.row(i));

  Matrix g_h = matmul_nn(g_v, params.w2);  // n x h
  Matrix g_z(n, h);
  for (std::size_t k = 0; k < g_z.data.size(); ++k)
    g_z.data[k] = g_h.data[k] * gelu_derivative(c.z.data[k]);

  out.param_grads.w1 = matmul_tn(g_z, x);  // h x d
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < h; ++j) out.param_grads.b1[j] += g_z.at(i, j);

  out.input_grads = matmul_nn(g_z, params.w1);  // n x d
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.input_grads.at(i, j) += params.alpha * g_v.at(i, j);
  return out;
}

void accumulate_param_grads(const AdapterParams& params, const Matrix& x,
                            const Matrix& upstream, AdapterGrads& acc) {
  EncoderBackward b = encoder_backward(params, x, upstream);
  for (std::size_t k = 0; k < acc.w1.data.size(); ++k) acc.w1.data[k] += b.param_grads.w1.data[k];
  for (std::size_t k = 0; k < acc.b1.size(); ++k) acc.b1[k] += b.param_grads.b1[k];
  for (std::size_t k = 0; k < acc.w2.data.size(); ++k) acc.w2.data[k] += b.param_grads.w2.data[k];
  for (std::size_t k = 0; k < acc.b2.size(); ++k) acc.b2[k] += b.param_grads.b2[k];
  acc.alpha += b.param_grads.alpha;
}

namespace {

constexpr char kMagic[16] = {'C', 'L', 'E', 'A', 'R', '-', 'A', 'D',
                             'A', 'P', 'T', '-', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw IncompatibleCheckpointError("checkpoint truncated");
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw IncompatibleCheckpointError("checkpoint truncated");
  return v;
}

void write_tensor(std::ostream& os, const std::string& name, const double* data,
                  std::uint64_t rows, std::uint64_t cols) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u64(os, rows);
  write_u64(os, cols);
  os.write(reinterpret_cast<const char*>(data),
           static_cast<std::streamsize>(rows * cols * sizeof(double)));
}

struct TensorRecord {
  std::string name;
  std::uint64_t rows = 0, cols = 0;
  std::vector<double> data;
};

TensorRecord read_tensor(std::istream& is) {
  TensorRecord r;
  const std::uint32_t len = read_u32(is);
  if (len > 256) throw IncompatibleCheckpointError("checkpoint record name too long");
  r.name.resize(len);
  if (!is.read(r.name.data(), len)) throw IncompatibleCheckpointError("checkpoint truncated");
  r.rows = read_u64(is);
  r.cols = read_u64(is);
  if (r.rows * r.cols > (1ULL << 28))
    throw IncompatibleCheckpointError("checkpoint tensor implausibly large");
  r.data.resize(r.rows * r.cols);
  if (!is.read(reinterpret_cast<char*>(r.data.data()),
               static_cast<std::streamsize>(r.data.size() * sizeof(double))))
    throw IncompatibleCheckpointError("checkpoint truncated");
  return r;
}

void write_adapter(std::ostream& os, const AdapterParams& p, const std::string& prefix) {
  write_tensor(os, prefix + "w1", p.w1.data.data(), p.w1.rows, p.w1.cols);
  write_tensor(os, prefix + "b1", p.b1.data(), 1, p.b1.size());
  write_tensor(os, prefix + "w2", p.w2.data.data(), p.w2.rows, p.w2.cols);
  write_tensor(os, prefix + "b2", p.b2.data(), 1, p.b2.size());
  write_tensor(os, prefix + "alpha", &p.alpha, 1, 1);
}

void assign_adapter(AdapterParams& p, const TensorRecord& r, const std::string& prefix) {
  auto to_matrix = [&](Matrix& m) {
    m = Matrix(static_cast<int>(r.rows), static_cast<int>(r.cols));
    m.data = r.data;
  };
  if (r.name == prefix + "w1") to_matrix(p.w1);
  else if (r.name == prefix + "b1") p.b1 = r.data;
  else if (r.name == prefix + "w2") to_matrix(p.w2);
  else if (r.name == prefix + "b2") p.b2 = r.data;
  else if (r.name == prefix + "alpha") p.alpha = r.data.at(0);
  else throw IncompatibleCheckpointError("unknown checkpoint record: " + r.name);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u32(os, kVersion);
  write_u64(os, ckpt.config_hash);
  write_u64(os, ckpt.step);
  write_u64(os, ckpt.rng_key);
  write_u64(os, ckpt.rng_counter);
  write_u32(os, 15);  // record count
  write_adapter(os, ckpt.params, "p.");
  write_adapter(os, ckpt.moment1, "m.");
  write_adapter(os, ckpt.moment2, "v.");
  if (!os) throw Error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path.string());
  char magic[16];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IncompatibleCheckpointError("bad checkpoint magic");
  if (read_u32(is) != kVersion)
    throw IncompatibleCheckpointError("unsupported checkpoint version");
  Checkpoint c;
  c.config_hash = read_u64(is);
  c.step = read_u64(is);
  c.rng_key = read_u64(is);
  c.rng_counter = read_u64(is);
  const std::uint32_t n_records = read_u32(is);
  for (std::uint32_t k = 0; k < n_records; ++k) {
    TensorRecord r = read_tensor(is);
    if (r.name.starts_with("p.")) assign_adapter(c.params, r, "p.");
    else if (r.name.starts_with("m.")) assign_adapter(c.moment1, r, "m.");
    else if (r.name.starts_with("v.")) assign_adapter(c.moment2, r, "v.");
    else throw IncompatibleCheckpointError("unknown checkpoint record: " + r.name);
  }
  is.peek();
  if (!is.eof()) throw IncompatibleCheckpointError("trailing bytes after checkpoint records");
  return c;
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::uint64_t expect_config_hash) {
  Checkpoint c = load_checkpoint(path);
  if (c.config_hash != expect_config_hash)
    throw IncompatibleCheckpointError("checkpoint config hash mismatch");
  return c;
}

}  // namespace clear
