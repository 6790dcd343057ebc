#include "uvq/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "uvq/byte_io.hpp"
#include "uvq/error.hpp"
#include "uvq/experiment.hpp"
#include "uvq/kv_document.hpp"

namespace uvq {
namespace {

std::filesystem::path dim_file(const std::filesystem::path& path) {
  auto p = path;
  p += ".dim";
  return p;
}

std::string coords_text(const ParameterVector& v) {
  std::string s;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    if (i) s += ' ';
    s += buf;
  }
  return s;
}

void write_trace(const std::filesystem::path& path, const IdentificationTrace& trace) {
  std::string s = "block,cell,quantized,estimate\n";
  for (std::size_t t = 0; t < trace.blocks.size(); ++t) {
    const auto& b = trace.blocks[t];
    s += std::to_string(t) + "," + std::to_string(b.cell) + "," + coords_text(b.quantized) + "," +
         (b.estimate ? coords_text(*b.estimate) : std::string()) + "\n";
  }
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

ParameterVector parse_theta(const std::string& text, std::size_t k) {
  std::vector<double> c;
  KvEntry e{"--theta", text, 0};
  for (const auto& tok : split_ws(text)) c.push_back(parse_number(e, tok));
  if (c.size() != k) throw ConfigError("--theta", 0, "expected " + std::to_string(k) + " coordinates");
  return ParameterVector(std::move(c));
}

struct Options {
  std::string config;
  std::string input;
  std::string output;
  std::string reproduction;
  std::string trace;
  std::string theta;
  std::size_t letters = 0;
  bool no_crc = false;
  std::string experiment;
  std::string out_dir;
  std::string records;
  std::string fits;
};

int cmd_sample(const Options& o, std::ostream& out) {
  const ExperimentConfig c = ExperimentConfig::load(o.config);
  const ParameterVector theta = o.theta.empty() ? c.test_thetas.front() : parse_theta(o.theta, c.family->param_dim());
  try {
    c.family->validate(theta);
  } catch (const ParameterError& e) {
    throw ConfigError("--theta", 0, e.what());
  }
  const SampleBlock z = sample_block(*c.family, theta, o.letters, StreamKey{c.seed, purpose_tag("cli-sample"), 0, 0});
  write_samples(o.output, z.values, z.d);
  out << "wrote " << o.letters << " letters (d = " << z.d << ") at theta = " << coords_text(theta) << " to "
      << o.output << "\n";
  return 0;
}

int cmd_encode(const Options& o, std::ostream& out) {
  const ExperimentConfig c = ExperimentConfig::load(o.config);
  const ExperimentContext ctx(c);
  CodecSetup setup = c.codec_setup(c.codec_n);
  setup.table = ctx.table_ptr();
  const TwoStageCodec codec(setup, ctx.codebooks());
  const std::vector<double> letters = read_samples(o.input, c.family->data_dim());
  const EncodeResult enc = codec.encode(letters);
  write_file_atomic(o.output, enc.stream);
  if (!o.reproduction.empty()) write_samples(o.reproduction, enc.reproduction, c.family->data_dim());
  if (!o.trace.empty()) write_trace(o.trace, enc.trace);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", enc.bits_per_letter(c.codec_n));
  out << "encoded " << enc.trace.blocks.size() << " blocks of n = " << c.codec_n << ": " << enc.payload_bits
      << " payload bits, " << buf << " bits/letter, " << enc.stream.size() << " bytes\n";
  return 0;
}

int cmd_decode(const Options& o, std::ostream& out) {
  const ExperimentConfig c = ExperimentConfig::load(o.config);
  const TwoStageCodec codec(c.codec_setup(c.codec_n),
                            std::make_shared<CodebookCache>(c.cache_dir));
  const auto stream = read_file(o.input);
  const DecodeResult dec = codec.decode(stream, !o.no_crc);
  write_samples(o.output, dec.reproduction, c.family->data_dim());
  if (!o.trace.empty()) write_trace(o.trace, dec.trace);
  out << "decoded " << dec.header.blocks << " blocks of n = " << dec.header.n << "\n";
  return 0;
}

int cmd_identify(const Options& o, std::ostream& out) {
  const ExperimentConfig c = ExperimentConfig::load(o.config);
  const ExperimentContext ctx(c);
  const ParameterGrid grid = ParameterGrid::build(c.family->theta_space(), c.cube_side, c.codec_n, *c.net);
  const std::vector<double> letters = read_samples(o.input, c.family->data_dim());
  const std::size_t d = c.family->data_dim();
  const std::size_t dim = c.codec_n * d;
  if (letters.size() % dim != 0) {
    throw PreconditionError("sample file does not hold a whole number of blocks of n = " + std::to_string(c.codec_n));
  }
  std::string s = "block,cell,quantized,estimate\n";
  for (std::size_t t = 0; t < letters.size() / dim; ++t) {
    SampleBlock z;
    z.n = c.codec_n;
    z.d = d;
    z.values.assign(letters.begin() + static_cast<std::ptrdiff_t>(t * dim),
                    letters.begin() + static_cast<std::ptrdiff_t>((t + 1) * dim));
    const FirstStage fs = first_stage_encode(*c.family, *c.net, ctx.table(), grid, z, c.slack);
    s += std::to_string(t) + "," + std::to_string(fs.cell) + "," + coords_text(grid.representative(fs.cell)) + "," +
         coords_text(fs.estimate) + "\n";
  }
  if (o.output.empty()) {
    out << s;
  } else {
    write_file_atomic(o.output, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  return 0;
}

int cmd_experiment(const Options& o, std::ostream& out) {
  const ExperimentConfig c = ExperimentConfig::load(o.config);
  const ExperimentContext ctx(c);
  std::vector<std::string> ids;
  if (o.experiment == "all") {
    ids = experiment_ids();
  } else {
    ids.push_back(o.experiment);
  }
  for (const auto& id : ids) {
    const ExperimentResult r = run_experiment(ctx, id);
    std::filesystem::path dir = o.out_dir.empty() ? c.output_dir : std::filesystem::path(o.out_dir);
    if (ids.size() > 1) dir /= id;
    write_outputs(c, r, dir);
    std::size_t violations = 0;
    for (const auto& ch : r.checks) violations += ch.violated ? 1 : 0;
    out << id << ": " << r.records.size() << " records, " << r.fits.size() << " fits";
    if (!r.checks.empty()) out << ", " << r.checks.size() << " checks, " << violations << " violations";
    out << " -> " << dir.string() << "\n";
    for (const auto& f : r.fits) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.4f", f.slope);
      out << "  slope " << f.metric << " vs " << f.regressor << " = " << buf << "\n";
    }
  }
  return 0;
}

int cmd_report(const Options& o, std::ostream& out) {
  const auto records = parse_records(read_text(o.records));
  std::vector<SlopeFit> fits;
  if (!o.fits.empty()) fits = parse_fits(read_text(o.fits));
  const auto files = render_plots(records, fits, o.out_dir);
  for (const auto& f : files) out << f.string() << "\n";
  return 0;
}

}  // namespace

void write_samples(const std::filesystem::path& path, std::span<const double> values, std::size_t dim) {
  ByteWriter w;
  w.f64s(values);
  write_file_atomic(path, w.data());
  const std::string side = std::to_string(dim) + "\n";
  write_file_atomic(dim_file(path), std::span(reinterpret_cast<const std::uint8_t*>(side.data()), side.size()));
}

std::vector<double> read_samples(const std::filesystem::path& path, std::size_t expected_dim) {
  const auto bytes = read_file(path);
  if (bytes.size() % 8 != 0) {
    throw PreconditionError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 8");
  }
  if (std::filesystem::exists(dim_file(path))) {
    const std::string side = read_text(dim_file(path));
    std::size_t d = 0;
    try {
      d = std::stoul(side);
    } catch (const std::logic_error&) {
      throw PreconditionError(dim_file(path).string() + ": malformed dimension");
    }
    if (d != expected_dim) {
      throw PreconditionError(path.string() + ": letter dimension " + std::to_string(d) + " does not match family d = " +
                              std::to_string(expected_dim));
    }
  }
  ByteReader r(bytes);
  const auto values = r.f64s(bytes.size() / 8);
  if (values.size() % expected_dim != 0) {
    throw PreconditionError(path.string() + ": value count is not a multiple of d");
  }
  return values;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage universal vector quantization experiments"};
  app.require_subcommand(1);
  Options o;

  auto* sample = app.add_subcommand("sample", "draw letters from P_theta into a raw f64 sample file");
  sample->add_option("--config", o.config, "experiment document")->required();
  sample->add_option("--theta", o.theta, "parameter, space separated (default: first test theta)");
  sample->add_option("--letters", o.letters, "number of letters")->required()->check(CLI::PositiveNumber);
  sample->add_option("--output", o.output, "sample file")->required();

  auto* encode = app.add_subcommand("encode", "two-stage encode a sample file");
  encode->add_option("--config", o.config, "experiment document")->required();
  encode->add_option("--input", o.input, "raw little-endian f64 sample file")->required();
  encode->add_option("--output", o.output, "bitstream file")->required();
  encode->add_option("--reproduction", o.reproduction, "encoder-side reproduction file");
  encode->add_option("--trace", o.trace, "identification trace CSV");

  auto* decode = app.add_subcommand("decode", "decode a bitstream into a reproduction file");
  decode->add_option("--config", o.config, "experiment document")->required();
  decode->add_option("--input", o.input, "bitstream file")->required();
  decode->add_option("--output", o.output, "reproduction file")->required();
  decode->add_option("--trace", o.trace, "identification trace CSV");
  decode->add_flag("--no-crc", o.no_crc, "skip the CRC check");

  auto* identify = app.add_subcommand("identify", "first-stage identification of each block of a sample file");
  identify->add_option("--config", o.config, "experiment document")->required();
  identify->add_option("--input", o.input, "sample file")->required();
  identify->add_option("--output", o.output, "trace CSV (default: stdout)");

  auto* experiment = app.add_subcommand("experiment", "run an experiment and write CSV, manifest and plots");
  experiment->add_option("id", o.experiment, "identification | redundancy | audit | all")
      ->required()
      ->check(CLI::IsMember({"identification", "redundancy", "audit", "all"}));
  experiment->add_option("--config", o.config, "experiment document")->required();
  experiment->add_option("--out", o.out_dir, "output directory (default: output.dir)");

  auto* report = app.add_subcommand("report", "render log-log SVG plots from CSV results");
  report->add_option("--records", o.records, "records.csv")->required();
  report->add_option("--fits", o.fits, "fits.csv");
  report->add_option("--out", o.out_dir, "plot directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    out << "\n" << config_schema_help();
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << "\n" << app.help() << "\n" << config_schema_help();
    return 1;
  }

  try {
    if (*sample) return cmd_sample(o, out);
    if (*encode) return cmd_encode(o, out);
    if (*decode) return cmd_decode(o, out);
    if (*identify) return cmd_identify(o, out);
    if (*experiment) return cmd_experiment(o, out);
    if (*report) return cmd_report(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n\n" << config_schema_help();
    return 1;
  } catch (const PreconditionError& e) {
    err << "invalid input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace uvq
