#include "hfgan/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "hfgan/nn.hpp"

namespace hfgan {

static_assert(std::endian::native == std::endian::little, "volume files are little-endian float32");

// ---------------------------------------------------------------------------
// AvailabilityMask

AvailabilityMask::AvailabilityMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto& b : bits_) b = b ? 1 : 0;
}

AvailabilityMask AvailabilityMask::from_bits(unsigned value, int n) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) bits[static_cast<std::size_t>(i)] = (value >> i) & 1u;
  return AvailabilityMask(std::move(bits));
}

AvailabilityMask AvailabilityMask::all(int n) { return AvailabilityMask(std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1)); }

AvailabilityMask AvailabilityMask::single(int n, int i) {
  AvailabilityMask m(std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0));
  m.set(i, true);
  return m;
}

AvailabilityMask AvailabilityMask::parse(const std::string& text) {
  std::vector<std::uint8_t> bits;
  for (char c : text) {
    if (c != '0' && c != '1') throw ParameterError("availability mask must be a 0/1 string: " + text);
    bits.push_back(c == '1');
  }
  return AvailabilityMask(std::move(bits));
}

int AvailabilityMask::count() const {
  int n = 0;
  for (auto b : bits_) n += b;
  return n;
}

unsigned AvailabilityMask::to_bits() const {
  unsigned v = 0;
  for (std::size_t i = 0; i < bits_.size(); ++i) v |= static_cast<unsigned>(bits_[i]) << i;
  return v;
}

std::string AvailabilityMask::to_string() const {
  std::string s;
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

std::vector<int> AvailabilityMask::available() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if ((*this)[i]) out.push_back(i);
  return out;
}

std::vector<int> AvailabilityMask::missing() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (!(*this)[i]) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// MultisequenceVolume

int MultisequenceVolume::modality_index(const std::string& name) const {
  for (std::size_t i = 0; i < modalities.size(); ++i)
    if (modalities[i] == name) return static_cast<int>(i);
  throw ParameterError("unknown modality '" + name + "' (have " + join(modalities, ',') + ")");
}

void MultisequenceVolume::validate() const {
  if (volumes.empty()) throw AlignmentError("volume set is empty");
  if (modalities.size() != volumes.size())
    throw AlignmentError("modality names (" + std::to_string(modalities.size()) + ") do not match volume count (" +
                         std::to_string(volumes.size()) + ")");
  std::string shapes;
  bool mismatch = false;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (volumes[i].rank() != 3) throw AlignmentError("volume " + modalities[i] + " is not 3D");
    shapes += (i ? ", " : "") + modalities[i] + "=" + shape_string(volumes[i].shape());
    mismatch = mismatch || volumes[i].shape() != volumes.front().shape();
  }
  if (voxel_mask && voxel_mask->shape() != volumes.front().shape()) mismatch = true;
  if (mismatch) throw AlignmentError("volumes are not aligned: " + shapes);
}

// ---------------------------------------------------------------------------
// Text helpers

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

std::string format_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::map<std::string, std::string> read_key_values(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError("cannot open " + file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError("malformed line in " + file.string() + ": " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void write_key_values(const fs::path& file, const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
  if (!out) throw IoError("write failed: " + file.string());
}

namespace {

Shape parse_shape(const std::string& text, const fs::path& where) {
  Shape s;
  for (const auto& part : split(text, ',')) {
    Index v = 0;
    auto res = std::from_chars(part.data(), part.data() + part.size(), v);
    if (res.ec != std::errc() || v <= 0) throw LoadError("bad shape '" + text + "' in " + where.string());
    s.push_back(v);
  }
  return s;
}

std::string shape_field(const Shape& s) {
  std::vector<std::string> parts;
  for (Index d : s) parts.push_back(std::to_string(d));
  return join(parts, ',');
}

float parse_float(const std::string& text) {
  float v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc()) throw LoadError("bad number: " + text);
  return v;
}

template <typename T>
void write_raw(const fs::path& file, const Tensor<T>& t) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!out) throw IoError("write failed: " + file.string());
}

template <typename T>
Tensor<T> read_raw(const fs::path& file, const Shape& shape) {
  if (!fs::exists(file)) throw LoadError("missing file: " + file.string());
  const auto bytes = fs::file_size(file);
  if (bytes != static_cast<std::uintmax_t>(numel(shape)) * sizeof(T))
    throw LoadError("file " + file.string() + " has " + std::to_string(bytes) + " bytes, expected shape " +
                    shape_string(shape));
  Tensor<T> t(shape);
  std::ifstream in(file, std::ios::binary);
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw LoadError("read failed: " + file.string());
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// IO

MultisequenceVolume load_volume_set(const std::vector<fs::path>& paths, const std::vector<std::string>& modality_order) {
  if (paths.size() != modality_order.size())
    throw ParameterError("got " + std::to_string(paths.size()) + " files for " + std::to_string(modality_order.size()) +
                         " modalities");
  MultisequenceVolume vol;
  vol.modalities = modality_order;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw LoadError("missing volume file: " + p.string());
    fs::path hdr = p;
    hdr.replace_extension(".hdr");
    if (!fs::exists(hdr)) throw LoadError("missing header sidecar for " + p.string());
    auto kv = read_key_values(hdr);
    if (!kv.count("shape")) throw LoadError("header " + hdr.string() + " has no shape");
    vol.volumes.push_back(read_raw<float>(p, parse_shape(kv["shape"], hdr)));
    if (kv.count("normalization")) vol.normalization = kv["normalization"];
  }
  vol.subject_id = paths.empty() ? "" : paths.front().parent_path().filename().string();
  vol.available = AvailabilityMask::all(static_cast<int>(paths.size()));
  vol.priors.assign(paths.size(), std::numeric_limits<float>::quiet_NaN());
  vol.validate();
  return vol;
}

void save_subject(const fs::path& root, const MultisequenceVolume& vol) {
  vol.validate();
  const fs::path dir = root / vol.subject_id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const AvailabilityMask avail = vol.available.size() ? vol.available : AvailabilityMask::all(vol.n_modalities());
  const std::string shape = shape_field(vol.volumes.front().shape());
  for (int i = 0; i < vol.n_modalities(); ++i) {
    if (!avail[i]) continue;
    const auto& name = vol.modalities[static_cast<std::size_t>(i)];
    write_raw(dir / (name + ".f32"), vol.volumes[static_cast<std::size_t>(i)]);
    write_key_values(dir / (name + ".hdr"),
                     {{"shape", shape}, {"modality", name}, {"dtype", "float32"}, {"normalization", vol.normalization}});
  }
  std::vector<std::pair<std::string, std::string>> meta{{"subject_id", vol.subject_id},
                                                        {"shape", shape},
                                                        {"modalities", join(vol.modalities, ',')},
                                                        {"available", avail.to_string()},
                                                        {"normalization", vol.normalization}};
  for (std::size_t i = 0; i < vol.priors.size() && i < vol.modalities.size(); ++i)
    if (std::isfinite(vol.priors[i])) meta.emplace_back("prior." + vol.modalities[i], format_float(vol.priors[i]));
  if (vol.labels) {
    write_raw(dir / "labels.u8", *vol.labels);
    meta.emplace_back("labels", "labels.u8");
  } else if (vol.voxel_mask) {
    write_raw(dir / "mask.u8", *vol.voxel_mask);
    meta.emplace_back("mask", "mask.u8");
  }
  write_key_values(dir / "meta.txt", meta);
}

MultisequenceVolume load_subject(const fs::path& subject_dir) {
  auto kv = read_key_values(subject_dir / "meta.txt");
  MultisequenceVolume vol;
  vol.subject_id = kv.count("subject_id") ? kv["subject_id"] : subject_dir.filename().string();
  vol.modalities = split(kv["modalities"], ',');
  if (vol.modalities.empty()) throw LoadError("no modalities listed in " + (subject_dir / "meta.txt").string());
  const Shape shape = parse_shape(kv["shape"], subject_dir / "meta.txt");
  if (shape.size() != 3) throw LoadError("volume shape must be 3D in " + subject_dir.string());
  if (kv.count("normalization")) vol.normalization = kv["normalization"];
  const int n = static_cast<int>(vol.modalities.size());
  vol.available = AvailabilityMask(std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0));
  vol.priors.assign(static_cast<std::size_t>(n), std::numeric_limits<float>::quiet_NaN());
  for (int i = 0; i < n; ++i) {
    const auto& name = vol.modalities[static_cast<std::size_t>(i)];
    const fs::path file = subject_dir / (name + ".f32");
    if (fs::exists(file)) {
      fs::path hdr = file;
      hdr.replace_extension(".hdr");
      Shape s = shape;
      if (fs::exists(hdr)) {
        auto h = read_key_values(hdr);
        if (h.count("shape")) s = parse_shape(h["shape"], hdr);
      }
      vol.volumes.push_back(read_raw<float>(file, s));
      vol.available.set(i, true);
    } else {
      vol.volumes.push_back(Volume(shape));
    }
    if (kv.count("prior." + name)) vol.priors[static_cast<std::size_t>(i)] = parse_float(kv["prior." + name]);
  }
  if (kv.count("labels")) {
    vol.labels = read_raw<std::uint8_t>(subject_dir / kv["labels"], shape);
    LabelVolume mask(shape);
    mask.array() = (vol.labels->array() != 0).cast<std::uint8_t>();
    vol.voxel_mask = std::move(mask);
  } else if (kv.count("mask")) {
    vol.voxel_mask = read_raw<std::uint8_t>(subject_dir / kv["mask"], shape);
  }
  vol.validate();
  return vol;
}

void write_manifest(const fs::path& root, const DatasetManifest& manifest) {
  std::vector<std::pair<std::string, std::string>> entries{{"modalities", join(manifest.modalities, ',')},
                                                           {"subjects", join(manifest.subjects, ',')}};
  for (const auto& kv : manifest.extra) entries.emplace_back(kv);
  write_key_values(root / "dataset.txt", entries);
}

DatasetManifest read_manifest(const fs::path& root) {
  if (!fs::exists(root / "dataset.txt")) throw LoadError("not a dataset directory (no dataset.txt): " + root.string());
  auto kv = read_key_values(root / "dataset.txt");
  DatasetManifest m;
  m.modalities = split(kv["modalities"], ',');
  m.subjects = split(kv["subjects"], ',');
  kv.erase("modalities");
  kv.erase("subjects");
  m.extra = std::move(kv);
  return m;
}

std::vector<MultisequenceVolume> load_dataset(const fs::path& root) {
  const auto manifest = read_manifest(root);
  std::vector<MultisequenceVolume> out;
  out.reserve(manifest.subjects.size());
  for (const auto& s : manifest.subjects) out.push_back(load_subject(root / s));
  return out;
}

std::uint64_t hash_directory(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const char* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 1099511628211ull;
    }
  };
  std::vector<char> buf;
  for (const auto& rel : files) {
    const std::string name = rel.generic_string();
    mix(name.data(), name.size() + 1);
    std::ifstream in(root / rel, std::ios::binary);
    buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    mix(buf.data(), buf.size());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Normalization

double percentile(std::vector<float> values, double q) {
  if (values.empty()) throw ParameterError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (static_cast<double>(values[hi]) - values[lo]);
}

Volume normalize_intensity(const Volume& volume, NormalizationMode mode, double upper_percentile) {
  if (volume.size() == 0) throw DegenerateRangeError("empty volume");
  const double lo = volume.array().minCoeff();
  double hi = volume.array().maxCoeff();
  if (mode == NormalizationMode::percentile) {
    std::vector<float> v(volume.data(), volume.data() + volume.size());
    hi = percentile(std::move(v), upper_percentile);
  }
  if (!(hi > lo)) throw DegenerateRangeError("volume has zero dynamic range (min=max=" + format_double(lo) + ")");
  Volume out(volume.shape());
  const double inv = 2.0 / (hi - lo);
  for (Index i = 0; i < volume.size(); ++i) {
    const double v = std::min(static_cast<double>(volume[i]), hi);
    out[i] = static_cast<float>(std::clamp((v - lo) * inv - 1.0, -1.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Slicing and masking

Index brain_pixel_count(const MultisequenceVolume& vol, Index z, MaskSource source) {
  const Index plane = vol.height() * vol.width();
  Index n = 0;
  if (source == MaskSource::provided) {
    if (!vol.voxel_mask) throw PolicyError("brain_threshold with the provided mask needs a voxel mask");
    const std::uint8_t* m = vol.voxel_mask->data() + z * plane;
    for (Index i = 0; i < plane; ++i) n += m[i] != 0;
    return n;
  }
  constexpr float kBackgroundLevel = -1.0f + 1e-3f;
  for (Index i = 0; i < plane; ++i) {
    bool any = false;
    for (int m = 0; m < vol.n_modalities() && !any; ++m)
      any = vol.available[m] && vol.volumes[static_cast<std::size_t>(m)][z * plane + i] > kBackgroundLevel;
    n += any;
  }
  return n;
}

std::vector<SliceRecord> extract_slices(const MultisequenceVolume& vol, const SlicePolicy& policy) {
  vol.validate();
  const Index d = vol.depth(), h = vol.height(), w = vol.width(), plane = h * w;
  std::vector<Index> keep;
  if (policy.kind == SlicePolicy::Kind::center_k) {
    if (policy.value <= 0 || policy.value > d)
      throw PolicyError("center_k(" + std::to_string(policy.value) + ") exceeds depth " + std::to_string(d));
    const Index start = (d - policy.value) / 2;
    for (Index z = start; z < start + policy.value; ++z) keep.push_back(z);
  } else {
    for (Index z = 0; z < d; ++z)
      if (brain_pixel_count(vol, z, policy.mask_source) >= policy.value) keep.push_back(z);
  }
  const MaskSource count_source = vol.voxel_mask ? MaskSource::provided : MaskSource::nonzero_intensity;
  std::vector<SliceRecord> out;
  out.reserve(keep.size());
  for (Index z : keep) {
    SliceRecord r;
    r.subject_id = vol.subject_id;
    r.slice_index = z;
    for (const auto& v : vol.volumes)
      r.images.emplace_back(Shape{h, w}, v.array().segment(z * plane, plane).eval());
    r.brain_pixel_count = brain_pixel_count(vol, z, count_source);
    if (vol.labels) r.labels = LabelImage(Shape{h, w}, vol.labels->array().segment(z * plane, plane).eval());
    r.priors = vol.priors;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Image> apply_availability_mask(const SliceRecord& record, const AvailabilityMask& mask) {
  if (mask.size() != record.n_modalities())
    throw ParameterError("availability mask length " + std::to_string(mask.size()) + " does not match " +
                         std::to_string(record.n_modalities()) + " modalities");
  std::vector<Image> out;
  out.reserve(record.images.size());
  for (int i = 0; i < mask.size(); ++i)
    out.push_back(mask[i] ? record.images[static_cast<std::size_t>(i)]
                          : Image::zeros(record.images[static_cast<std::size_t>(i)].shape()));
  return out;
}

// ---------------------------------------------------------------------------
// Phantoms

std::vector<std::string> phantom_modality_names(int n_modalities) {
  if (n_modalities == 4) return {"T1", "T2", "T1c", "FL"};
  if (n_modalities == 3) return {"T1", "T2", "PD"};
  throw ParameterError("phantoms support 3 or 4 modalities, got " + std::to_string(n_modalities));
}

namespace {

constexpr float kUnderlying = std::numeric_limits<float>::infinity();

// Rows: modality; columns: background, skull, GM, WM, CSF, lesion core, lesion rim.
// The core is visible only in modality 0 and the rim only in modality 1 among
// the first two; the remaining modalities show the full lesion extent.
constexpr float kContrast4[4][kTissueLabelCount] = {
    {-1.0f, 0.55f, 0.05f, 0.40f, -0.60f, 0.85f, kUnderlying},
    {-1.0f, -0.30f, 0.25f, -0.05f, 0.80f, kUnderlying, 0.55f},
    {-1.0f, 0.50f, 0.00f, 0.30f, -0.70f, -0.45f, 0.90f},
    {-1.0f, 0.10f, 0.20f, -0.10f, -0.80f, 0.70f, 0.70f},
};
constexpr float kContrast3[3][kTissueLabelCount] = {
    {-1.0f, 0.55f, 0.05f, 0.40f, -0.60f, 0.85f, kUnderlying},
    {-1.0f, -0.30f, 0.25f, -0.05f, 0.80f, kUnderlying, 0.55f},
    {-1.0f, 0.20f, 0.35f, 0.05f, 0.60f, 0.75f, 0.75f},
};

struct Ellipsoid {
  double cx, cy, cz, ax, ay, az, angle;
  double value(double x, double y, double z) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / ax, v = (-s * dx + c * dy) / ay, w = (z - cz) / az;
    return u * u + v * v + w * w;
  }
  bool contains(double x, double y, double z) const { return value(x, y, z) <= 1.0; }
};

MultisequenceVolume make_phantom(const PhantomOptions& opt, int subject) {
  Rng rng(opt.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(subject) * 0xBF58476D1CE4E5B9ull + 1);
  const Index n = opt.size, d = opt.depth;
  const int nm = opt.n_modalities;

  const double angle = uniform(rng, -0.2, 0.2);
  Ellipsoid head{uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), 0.0, uniform(rng, 0.74, 0.86),
                 uniform(rng, 0.84, 0.94), uniform(rng, 1.05, 1.3), angle};
  const double skull = uniform(rng, 0.08, 0.11);
  Ellipsoid brain = head;
  brain.ax -= skull;
  brain.ay -= skull;
  brain.az -= skull;
  const double wm_scale = uniform(rng, 0.55, 0.7);
  Ellipsoid white{brain.cx + uniform(rng, -0.04, 0.04), brain.cy + uniform(rng, -0.04, 0.04), 0.0,
                  brain.ax * wm_scale, brain.ay * wm_scale, brain.az * 0.85, angle + uniform(rng, -0.1, 0.1)};
  const double vent_sep = uniform(rng, 0.08, 0.14);
  const double vent_ax = uniform(rng, 0.06, 0.1), vent_ay = uniform(rng, 0.14, 0.22);
  Ellipsoid vent_l{brain.cx - vent_sep, brain.cy - 0.03, 0.0, vent_ax, vent_ay, 0.6, angle};
  Ellipsoid vent_r{brain.cx + vent_sep, brain.cy - 0.03, 0.0, vent_ax, vent_ay, 0.6, angle};

  const bool has_lesion = uniform01(rng) < opt.lesion_probability;
  const double lr = uniform(rng, 0.0, 0.35), lt = uniform(rng, 0.0, 6.283185307179586);
  const double core_r = uniform(rng, 0.12, 0.2), rim_w = uniform(rng, 0.09, 0.14);
  Ellipsoid core{brain.cx + lr * std::cos(lt), brain.cy + lr * std::sin(lt), uniform(rng, -0.4, 0.4), core_r, core_r,
                 core_r * 3.0, 0.0};
  Ellipsoid rim = core;
  rim.ax += rim_w;
  rim.ay += rim_w;
  rim.az += rim_w * 3.0;

  std::vector<double> gain(static_cast<std::size_t>(nm)), offset(static_cast<std::size_t>(nm));
  for (int m = 0; m < nm; ++m) {
    gain[static_cast<std::size_t>(m)] = uniform(rng, 1.0 - opt.gain_jitter, 1.0 + opt.gain_jitter);
    offset[static_cast<std::size_t>(m)] = uniform(rng, -0.05, 0.05);
  }

  LabelVolume labels(Shape{d, n, n});
  LabelVolume underlying(Shape{d, n, n});
  for (Index z = 0; z < d; ++z) {
    const double wz = (static_cast<double>(z) + 0.5) / static_cast<double>(d) * 2.0 - 1.0;
    for (Index y = 0; y < n; ++y) {
      const double wy = (static_cast<double>(y) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
      for (Index x = 0; x < n; ++x) {
        const double wx = (static_cast<double>(x) + 0.5) / static_cast<double>(n) * 2.0 - 1.0;
        std::uint8_t tissue = kBackground;
        if (head.contains(wx, wy, wz)) tissue = kSkull;
        if (brain.contains(wx, wy, wz)) {
          tissue = kGrayMatter;
          if (white.contains(wx, wy, wz)) tissue = kWhiteMatter;
          if (vent_l.contains(wx, wy, wz) || vent_r.contains(wx, wy, wz)) tissue = kCsf;
        }
        std::uint8_t label = tissue;
        if (has_lesion && (tissue == kGrayMatter || tissue == kWhiteMatter)) {
          if (core.contains(wx, wy, wz))
            label = kLesionCore;
          else if (rim.contains(wx, wy, wz))
            label = kLesionRim;
        }
        labels.at(z, y, x) = label;
        underlying.at(z, y, x) = tissue;
      }
    }
  }

  MultisequenceVolume vol;
  char id[32];
  std::snprintf(id, sizeof id, "sub%03d", subject);
  vol.subject_id = id;
  vol.modalities = phantom_modality_names(nm);
  vol.available = AvailabilityMask::all(nm);
  vol.normalization = "phantom";
  for (int m = 0; m < nm; ++m) {
    Volume v(Shape{d, n, n});
    for (Index i = 0; i < v.size(); ++i) {
      const std::uint8_t lab = labels[i];
      double value = phantom_contrast(m, nm, lab, underlying[i]);
      if (lab != kBackground) value = value * gain[static_cast<std::size_t>(m)] + offset[static_cast<std::size_t>(m)];
      value += opt.noise_sigma * standard_normal(rng);
      v[i] = static_cast<float>(std::clamp(value, -1.0, 1.0));
    }
    vol.volumes.push_back(std::move(v));
  }
  LabelVolume mask(Shape{d, n, n});
  mask.array() = (labels.array() != 0).cast<std::uint8_t>();
  vol.voxel_mask = std::move(mask);
  vol.labels = std::move(labels);
  attach_priors(vol);
  return vol;
}

}  // namespace

float phantom_contrast(int modality, int n_modalities, std::uint8_t label, std::uint8_t underlying) {
  if (label >= kTissueLabelCount) throw ParameterError("unknown tissue label " + std::to_string(label));
  const float v = n_modalities == 4 ? kContrast4[modality][label] : kContrast3[modality][label];
  if (v == kUnderlying) return phantom_contrast(modality, n_modalities, underlying, underlying);
  return v;
}

std::vector<MultisequenceVolume> generate_phantoms(const PhantomOptions& options) {
  if (options.size < 32) throw ParameterError("phantom size must be at least 32, got " + std::to_string(options.size));
  if (options.n_modalities != 3 && options.n_modalities != 4)
    throw ParameterError("phantoms support 3 or 4 modalities, got " + std::to_string(options.n_modalities));
  if (options.n_subjects <= 0) throw ParameterError("n_subjects must be positive");
  if (options.depth <= 0) throw ParameterError("depth must be positive");
  std::vector<MultisequenceVolume> out;
  out.reserve(static_cast<std::size_t>(options.n_subjects));
  for (int s = 0; s < options.n_subjects; ++s) out.push_back(make_phantom(options, s));
  return out;
}

std::uint64_t generate_phantom_dataset(const PhantomOptions& options, const fs::path& root) {
  auto subjects = generate_phantoms(options);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  DatasetManifest manifest;
  manifest.modalities = phantom_modality_names(options.n_modalities);
  for (const auto& s : subjects) {
    save_subject(root, s);
    manifest.subjects.push_back(s.subject_id);
  }
  manifest.extra["generator"] = "phantom";
  manifest.extra["seed"] = std::to_string(options.seed);
  manifest.extra["size"] = std::to_string(options.size);
  manifest.extra["depth"] = std::to_string(options.depth);
  write_manifest(root, manifest);
  return hash_directory(root);
}

// ---------------------------------------------------------------------------
// Priors

LabelVolume soft_tissue_mask(const LabelVolume& labels) {
  LabelVolume mask(labels.shape());
  for (Index i = 0; i < labels.size(); ++i) mask[i] = labels[i] >= kGrayMatter;
  return mask;
}

IntensityPrior median_soft_tissue_prior(const Volume& volume, const LabelVolume& mask) {
  if (mask.shape() != volume.shape()) throw PriorError("prior mask shape does not match volume");
  std::vector<float> values;
  for (Index i = 0; i < volume.size(); ++i)
    if (mask[i]) values.push_back(volume[i]);
  if (values.empty()) throw PriorError("soft-tissue mask is empty");
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  float median = *mid;
  if (values.size() % 2 == 0) {
    const float lower = *std::max_element(values.begin(), mid);
    median = 0.5f * (median + lower);
  }
  return {std::clamp(median, -1.0f, 1.0f)};
}

IntensityPrior dataset_mean_prior(const std::vector<float>& subject_medians) {
  if (subject_medians.empty()) throw PriorError("no training priors to average");
  double acc = 0;
  for (float v : subject_medians) acc += v;
  return {static_cast<float>(acc / static_cast<double>(subject_medians.size()))};
}

IntensityPrior compute_intensity_prior(const Volume& volume, const LabelVolume& mask, PriorMode mode,
                                       float precomputed_mean) {
  if (mode == PriorMode::dataset_mean) return {precomputed_mean};
  return median_soft_tissue_prior(volume, mask);
}

void attach_priors(MultisequenceVolume& vol) {
  vol.priors.assign(static_cast<std::size_t>(vol.n_modalities()), std::numeric_limits<float>::quiet_NaN());
  std::optional<LabelVolume> mask;
  if (vol.labels)
    mask = soft_tissue_mask(*vol.labels);
  else if (vol.voxel_mask)
    mask = vol.voxel_mask;
  if (!mask) return;
  for (int m = 0; m < vol.n_modalities(); ++m)
    if (vol.available.size() == 0 || vol.available[m])
      vol.priors[static_cast<std::size_t>(m)] = median_soft_tissue_prior(vol.volumes[static_cast<std::size_t>(m)], *mask).value;
}

}  // namespace hfgan
