#include "awb/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace awb {

namespace {

constexpr char kMagic[] = "AWBCKPT";
constexpr char kVersion = '1';
constexpr std::size_t kHeader = 8 + 8;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

[[noreturn]] void fail(CheckpointErrorKind kind, const std::string& what) { throw CheckpointError(kind, what); }

std::size_t parse_size(const std::string& text, const std::string& context) {
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) fail(CheckpointErrorKind::malformed, "bad integer '" + text + "' in " + context);
  return v;
}

std::uint64_t parse_u64(const std::string& text, const std::string& context) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) fail(CheckpointErrorKind::malformed, "bad integer '" + text + "' in " + context);
  return v;
}

}  // namespace

std::string to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::bad_magic: return "bad_magic";
    case CheckpointErrorKind::version_mismatch: return "version_mismatch";
    case CheckpointErrorKind::truncated: return "truncated";
    case CheckpointErrorKind::digest_mismatch: return "digest_mismatch";
    case CheckpointErrorKind::malformed: return "malformed";
  }
  return "malformed";
}

std::uint64_t fnv1a64(const std::uint8_t* bytes, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string exact_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_exact_double(const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not a number: '" + text + "'");
  return v;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  std::ostringstream manifest;
  std::size_t offset = 0;
  for (const auto& t : data.tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("checkpoint: tensor name '" + t.name + "' must be non-empty without whitespace");
    }
    manifest << "tensor " << t.name << ' ' << t.tensor.rank();
    for (std::size_t d : t.tensor.shape()) manifest << ' ' << d;
    manifest << ' ' << offset << '\n';
    offset += t.tensor.size() * 4;
  }
  for (const auto& [key, value] : data.meta) {
    if (key.find_first_of(" \t\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint: meta entry '" + key + "' is not representable");
    }
    manifest << "meta " << key << ' ' << value << '\n';
  }
  const std::string text = manifest.str();

  std::vector<std::uint8_t> out(kMagic, kMagic + 7);
  out.push_back(static_cast<std::uint8_t>(kVersion));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  out.reserve(out.size() + offset + 8);
  for (const auto& t : data.tensors) {
    for (float v : t.tensor.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }
  put_u64(out, fnv1a64(out.data() + 8, out.size() - 8));
  return out;
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) {
    if (bytes.size() < 7 && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0) {
      fail(CheckpointErrorKind::truncated, "file holds only " + std::to_string(bytes.size()) + " bytes");
    }
    if (bytes.size() == 7 && std::memcmp(bytes.data(), kMagic, 7) == 0) {
      fail(CheckpointErrorKind::truncated, "file ends inside the magic");
    }
    fail(CheckpointErrorKind::bad_magic, "not a checkpoint");
  }
  if (std::memcmp(bytes.data(), kMagic, 7) != 0) fail(CheckpointErrorKind::bad_magic, "not a checkpoint");
  if (bytes[7] != static_cast<std::uint8_t>(kVersion)) {
    fail(CheckpointErrorKind::version_mismatch,
         std::string("format version '") + static_cast<char>(bytes[7]) + "', expected '" + kVersion + "'");
  }
  if (bytes.size() < kHeader) fail(CheckpointErrorKind::truncated, "file ends inside the header");
  const std::uint64_t manifest_len = get_u64(bytes.data() + 8);
  if (manifest_len > bytes.size() - kHeader) fail(CheckpointErrorKind::truncated, "file ends inside the manifest");
  const std::string text(bytes.begin() + kHeader, bytes.begin() + kHeader + static_cast<std::ptrdiff_t>(manifest_len));

  struct Record {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Record> records;
  CheckpointData data;
  std::istringstream lines(text);
  std::string line;
  std::size_t expected_offset = 0;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (kind == "tensor") {
      Record r;
      std::string rank_text;
      if (!(fields >> r.name >> rank_text)) fail(CheckpointErrorKind::malformed, "tensor record '" + line + "'");
      const std::size_t rank = parse_size(rank_text, line);
      for (std::size_t i = 0; i < rank; ++i) {
        std::string d;
        if (!(fields >> d)) fail(CheckpointErrorKind::malformed, "tensor record '" + line + "'");
        r.shape.push_back(parse_size(d, line));
      }
      std::string off, extra;
      if (!(fields >> off) || (fields >> extra)) fail(CheckpointErrorKind::malformed, "tensor record '" + line + "'");
      r.offset = parse_size(off, line);
      if (r.offset != expected_offset) fail(CheckpointErrorKind::malformed, "non-contiguous offset in '" + line + "'");
      expected_offset += numel(r.shape) * 4;
      records.push_back(std::move(r));
    } else if (kind == "meta") {
      std::string key;
      if (!(fields >> key)) fail(CheckpointErrorKind::malformed, "meta record '" + line + "'");
      std::string value;
      std::getline(fields, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      data.meta[key] = value;
    } else {
      fail(CheckpointErrorKind::malformed, "unknown record '" + line + "'");
    }
  }

  const std::size_t payload_start = kHeader + manifest_len;
  const std::size_t payload_len = expected_offset;
  if (bytes.size() < payload_start + payload_len + 8) fail(CheckpointErrorKind::truncated, "file ends inside the payload");
  if (bytes.size() > payload_start + payload_len + 8) fail(CheckpointErrorKind::malformed, "trailing bytes after checksum");
  const std::uint64_t stored = get_u64(bytes.data() + payload_start + payload_len);
  if (stored != fnv1a64(bytes.data() + 8, payload_start + payload_len - 8)) {
    fail(CheckpointErrorKind::digest_mismatch, "checksum does not match");
  }
  for (const auto& r : records) {
    std::vector<float> values(numel(r.shape));
    const std::uint8_t* p = bytes.data() + payload_start + r.offset;
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[4 * i + b]) << (8 * b);
      values[i] = std::bit_cast<float>(bits);
    }
    data.tensors.push_back({r.name, TensorF(r.shape, std::move(values))});
  }
  return data;
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

namespace {

const char* const kNets[] = {"net_a", "net_b", "teacher_a", "teacher_b"};

std::vector<Backbone<float>*> members(DualNetworks<float>& d) {
  return {&d.net_a, &d.net_b, &d.teacher_a, &d.teacher_b};
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

const std::string& need(const CheckpointData& data, const std::string& key) {
  auto it = data.meta.find(key);
  if (it == data.meta.end()) fail(CheckpointErrorKind::malformed, "missing meta entry " + key);
  return it->second;
}

}  // namespace

CheckpointData pack_dual(DualNetworks<float>& nets) {
  CheckpointData data;
  const auto& spec = nets.net_a.spec();
  const auto& awb = nets.net_a.awb();
  const auto& opts = nets.net_a.attention_options();
  data.meta["spec.in_channels"] = std::to_string(spec.in_channels);
  data.meta["spec.height"] = std::to_string(spec.height);
  data.meta["spec.width"] = std::to_string(spec.width);
  data.meta["spec.channels"] = join(spec.channels);
  data.meta["spec.embedding"] = std::to_string(spec.embedding);
  data.meta["awb.attention"] = to_string(awb.attention);
  data.meta["awb.strategy"] = to_string(awb.strategy);
  data.meta["awb.r_w"] = exact_double(awb.wave.r_w);
  data.meta["awb.r_h"] = exact_double(awb.wave.r_h);
  data.meta["awb.wave_kind"] = to_string(awb.wave.kind);
  data.meta["awb.reduction"] = std::to_string(opts.reduction);
  data.meta["awb.kernel"] = std::to_string(opts.kernel);
  data.meta["ema_momentum"] = exact_double(nets.ema_momentum);
  data.meta["pretrain_epochs"] = std::to_string(nets.pretrain_epochs);
  data.meta["adapt_epochs"] = std::to_string(nets.adapt_epochs);
  data.meta["rng.algorithm"] = RngStream::algorithm;
  auto nets_list = members(nets);
  for (std::size_t i = 0; i < nets_list.size(); ++i) {
    Backbone<float>& net = *nets_list[i];
    const std::string p = kNets[i];
    if (net.spec().channels != spec.channels || net.awb().attention != awb.attention) {
      throw std::invalid_argument("checkpoint: the four networks must share one architecture");
    }
    data.meta[p + ".num_classes"] = std::to_string(net.num_classes());
    data.meta[p + ".wave_rng.seed"] = std::to_string(net.wave_rng().seed());
    data.meta[p + ".wave_rng.stream"] = std::to_string(net.wave_rng().stream_id());
    data.meta[p + ".wave_rng.counter"] = std::to_string(net.wave_rng().counter());
    net.visit([&](const std::string& name, TensorF& t, bool) { data.tensors.push_back({p + "." + name, t}); });
  }
  return data;
}

DualNetworks<float> unpack_dual(const CheckpointData& data) {
  BackboneSpec spec;
  AwbConfig awb;
  AttentionOptions opts;
  DualNetworks<float> nets;
  try {
    spec.in_channels = parse_size(need(data, "spec.in_channels"), "spec.in_channels");
    spec.height = parse_size(need(data, "spec.height"), "spec.height");
    spec.width = parse_size(need(data, "spec.width"), "spec.width");
    spec.channels.clear();
    std::istringstream ch(need(data, "spec.channels"));
    for (std::string c; std::getline(ch, c, ',');) spec.channels.push_back(parse_size(c, "spec.channels"));
    spec.embedding = parse_size(need(data, "spec.embedding"), "spec.embedding");
    awb.attention = parse_attention_kind(need(data, "awb.attention"));
    awb.strategy = parse_strategy(need(data, "awb.strategy"));
    awb.wave.r_w = parse_exact_double(need(data, "awb.r_w"));
    awb.wave.r_h = parse_exact_double(need(data, "awb.r_h"));
    awb.wave.kind = parse_wave_kind(need(data, "awb.wave_kind"));
    opts.reduction = parse_size(need(data, "awb.reduction"), "awb.reduction");
    opts.kernel = parse_size(need(data, "awb.kernel"), "awb.kernel");
    nets.ema_momentum = parse_exact_double(need(data, "ema_momentum"));
    nets.pretrain_epochs = parse_size(need(data, "pretrain_epochs"), "pretrain_epochs");
    nets.adapt_epochs = parse_size(need(data, "adapt_epochs"), "adapt_epochs");
    if (need(data, "rng.algorithm") != RngStream::algorithm) {
      fail(CheckpointErrorKind::malformed, "RNG algorithm " + need(data, "rng.algorithm"));
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    fail(CheckpointErrorKind::malformed, e.what());
  }

  std::map<std::string, const TensorF*> by_name;
  for (const auto& t : data.tensors) by_name[t.name] = &t.tensor;
  std::size_t consumed = 0;
  auto nets_list = members(nets);
  for (std::size_t i = 0; i < nets_list.size(); ++i) {
    const std::string p = kNets[i];
    const RngStream wave(parse_u64(need(data, p + ".wave_rng.seed"), p),
                         parse_u64(need(data, p + ".wave_rng.stream"), p),
                         parse_u64(need(data, p + ".wave_rng.counter"), p));
    Backbone<float> net;
    try {
      net = Backbone<float>::create(spec, RngStream(), wave, parse_size(need(data, p + ".num_classes"), p));
      net.attach_awb(awb, RngStream(), opts);
    } catch (const CheckpointError&) {
      throw;
    } catch (const std::exception& e) {
      fail(CheckpointErrorKind::malformed, e.what());
    }
    net.visit([&](const std::string& name, TensorF& t, bool) {
      auto it = by_name.find(p + "." + name);
      if (it == by_name.end()) fail(CheckpointErrorKind::malformed, "missing tensor " + p + "." + name);
      if (it->second->shape() != t.shape()) fail(CheckpointErrorKind::malformed, "shape mismatch for " + p + "." + name);
      auto dst = t.data_mut();
      std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
      ++consumed;
    });
    *nets_list[i] = std::move(net);
  }
  if (consumed != data.tensors.size()) fail(CheckpointErrorKind::malformed, "checkpoint holds unknown tensors");
  for (auto* t : {&nets.teacher_a, &nets.teacher_b}) {
    for (auto g : {ParamGroup::backbone, ParamGroup::attention, ParamGroup::classifier}) t->set_trainable(g, false);
  }
  return nets;
}

void save_dual(const std::string& path, DualNetworks<float>& nets) { write_checkpoint(path, pack_dual(nets)); }

DualNetworks<float> load_dual(const std::string& path) { return unpack_dual(read_checkpoint(path)); }

}  // namespace awb
