// slotalign: corpus generation, training, alignment, evaluation and the
// comparative benchmark.
//
// Exit codes: 0 ok, 1 runtime failure, 2 missing/unreadable file,
// 3 parse failure, 4 invalid config or request.

#include <charconv>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slotalign/aligner.hpp"
#include "slotalign/bench.hpp"
#include "slotalign/checkpoint.hpp"
#include "slotalign/config.hpp"
#include "slotalign/ctc.hpp"
#include "slotalign/io.hpp"
#include "slotalign/metrics.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace slotalign;

namespace {

constexpr const char* kSlotModel = "slot_aligner";
constexpr const char* kCtcModel = "ctc_baseline";

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kIo: return 2;
    case ErrorKind::kParse: return 3;
    case ErrorKind::kConfig:
    case ErrorKind::kRequest: return 4;
    default: return 1;
  }
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.resolve();
    return c;
  }
  return parse_run_config(read_file(path));
}

void log_row(const std::string& run, const TraceRow& r) {
  std::cerr << run << " step " << r.step << " loss " << r.loss << " lr " << r.lr << '\n';
}

std::string trace_tsv(const std::vector<TraceRow>& trace) {
  std::string s = "step\tloss\tlr\n";
  for (const auto& r : trace)
    s += std::to_string(r.step) + '\t' + detail::format_double(r.loss) + '\t' + detail::format_double(r.lr) + '\n';
  return s;
}

std::vector<std::int32_t> parse_tokens(const std::string& arg, std::size_t n_tokens) {
  if (arg == "all") return all_token_indices(n_tokens);
  std::vector<std::int32_t> out;
  std::string_view rest = arg;
  while (true) {
    const auto comma = rest.find(',');
    const auto item = rest.substr(0, comma);
    std::int32_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size())
      throw Error(ErrorKind::kRequest, "bad --tokens entry '" + std::string(item) + "'");
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

fs::path sidecar_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".json"); }

void write_sidecar(const fs::path& checkpoint, const char* model, const RunConfig& cfg) {
  const json j = {{"model", model}, {"run_config", format_run_config(cfg)}};
  write_file_atomic(sidecar_path(checkpoint), j.dump(2) + "\n");
}

std::pair<std::string, RunConfig> read_sidecar(const fs::path& checkpoint) {
  const auto text = read_file(sidecar_path(checkpoint));
  json j;
  try {
    j = json::parse(text);
    return {j.at("model").get<std::string>(), parse_run_config(j.at("run_config").get<std::string>())};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, sidecar_path(checkpoint).string() + ": " + e.what());
  }
}

int cmd_gen(const std::string& config, const std::string& out, std::int32_t count, std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_config(config);
  cfg.train.count = count;
  if (seed) cfg.train.seed = *seed;
  cfg.resolve();
  const PrototypeTable protos(cfg.corpus);
  const auto corpus = build_train_corpus(cfg.corpus, protos, cfg.train);
  write_manifest(out, corpus);
  write_file_atomic(fs::path(out).replace_extension(".cfg"), format_run_config(cfg));
  std::cerr << "wrote " << corpus.size() << " utterances to " << out << '\n';
  return 0;
}

int cmd_train(const std::string& config, const std::string& manifest, const std::string& out,
              const std::string& model) {
  const RunConfig cfg = load_config(config);
  const auto corpus = read_manifest(manifest);
  const fs::path dir(out);
  std::vector<TraceRow> trace;
  const auto log = [&](const TraceRow& r) { log_row(model, r); };
  if (model == "slot") {
    AlignerModel<float> m(cfg.aligner);
    trace = train(m, corpus, cfg.schedule, log);
    nn::save_checkpoint(dir / "model.sfaw", m.params());
    write_sidecar(dir / "model.sfaw", kSlotModel, cfg);
  } else if (model == "ctc") {
    CtcModel<float> m(cfg.ctc);
    trace = train_ctc(m, corpus, cfg.ctc_schedule, log);
    nn::save_checkpoint(dir / "model.sfaw", m.params());
    write_sidecar(dir / "model.sfaw", kCtcModel, cfg);
  } else {
    throw Error(ErrorKind::kConfig, "unknown model '" + model + "' (slot|ctc)");
  }
  write_file_atomic(dir / "loss_trace.tsv", trace_tsv(trace));
  write_file_atomic(dir / "resolved.cfg", format_run_config(cfg));
  return 0;
}

int cmd_align(const std::string& checkpoint, const std::string& manifest, const std::string& tokens,
              const std::string& out) {
  const auto [model_name, cfg] = read_sidecar(checkpoint);
  const auto corpus = read_manifest(manifest);
  std::optional<AlignerModel<float>> slot;
  std::optional<CtcModel<float>> ctc;
  if (model_name == kSlotModel) {
    slot.emplace(cfg.aligner);
    nn::load_checkpoint(checkpoint, slot->params());
  } else if (model_name == kCtcModel) {
    if (tokens != "all") throw Error(ErrorKind::kRequest, "the CTC baseline aligns all tokens only");
    ctc.emplace(cfg.ctc);
    nn::load_checkpoint(checkpoint, ctc->params());
  } else {
    throw Error(ErrorKind::kParse, "unknown model kind '" + model_name + "' in sidecar");
  }
  std::string lines;
  for (const auto& u : corpus) {
    const AlignmentResult r = slot ? slot->align(u, parse_tokens(tokens, u.tokens.size())) : ctc->align(u);
    json spans = json::array();
    for (const auto& t : r.tokens) spans.push_back({t.token_index, t.start_ms, t.end_ms});
    lines += json{{"id", u.id},
                  {"tokens", spans},
                  {"forward_passes", r.forward_passes},
                  {"elapsed_ms", r.elapsed_ms}}
                 .dump() +
             "\n";
  }
  write_file_atomic(out, lines);
  return 0;
}

std::vector<AlignmentResult> read_alignments(const std::string& path, const std::vector<Utterance>& corpus) {
  const auto text = read_file(path);
  std::map<std::string, AlignmentResult> by_id;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      AlignmentResult r;
      for (const auto& t : j.at("tokens"))
        r.tokens.push_back({t.at(0).get<std::int32_t>(), t.at(1).get<Millis>(), t.at(2).get<Millis>()});
      r.forward_passes = j.value("forward_passes", 1);
      r.elapsed_ms = j.at("elapsed_ms").get<double>();
      by_id[j.at("id").get<std::string>()] = std::move(r);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<AlignmentResult> out;
  for (const auto& u : corpus) {
    auto it = by_id.find(u.id);
    if (it == by_id.end()) throw Error(ErrorKind::kParse, path + ": no alignment for " + u.id);
    it->second.audio_duration_ms = u.duration_ms();
    out.push_back(std::move(it->second));
  }
  return out;
}

int cmd_eval(const std::string& alignments, const std::string& manifest, const std::string& ref,
             const std::string& out) {
  if (ref != "gold" && ref != "pseudo") throw Error(ErrorKind::kConfig, "--ref must be gold or pseudo");
  const auto corpus = read_manifest(manifest);
  const auto results = read_alignments(alignments, corpus);
  EvalReport rep;
  rep.reference = ref;
  rep.suites.push_back(score_suite(fs::path(manifest).stem().string(), corpus, results,
                                   ref == "gold" ? Reference::kGold : Reference::kPseudo, /*expect_all=*/false));
  write_file_atomic(out, to_json(rep).dump(2) + "\n");
  write_file_atomic(fs::path(out).replace_extension(".curve.tsv"), curve_tsv(rep.suites.front().curve));
  return 0;
}

int cmd_bench(const std::string& config, const std::string& out) {
  const RunConfig cfg = load_config(config);
  const fs::path dir(out);
  write_file_atomic(dir / "resolved.cfg", format_run_config(cfg));
  const BenchResult res = run_bench(cfg, log_row);
  write_file_atomic(dir / "report.json", to_json(res).dump(2) + "\n");
  for (const auto& run : res.runs) {
    write_file_atomic(dir / (run.name + ".loss_trace.tsv"), trace_tsv(run.trace));
    for (const auto& s : run.report.suites)
      write_file_atomic(dir / (run.name + "." + s.name + ".curve.tsv"), curve_tsv(s.curve));
  }
  for (const auto& run : res.runs)
    for (const auto& s : run.report.suites)
      std::cout << run.name << '\t' << s.name << "\taas_ms=" << s.aas_ms << "\tslope_per_10=" << s.slope_ms_per_10
                << "\tmono_rate=" << s.monotonicity.rate() << "\trtf=" << s.rtf << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slot-filling forced alignment toolkit"};
  app.require_subcommand(1);

  std::string config, out, manifest, checkpoint, tokens = "all", alignments, ref = "gold", model = "slot";
  std::int32_t count = 0;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen", "generate a training corpus manifest");
  gen->add_option("--config", config, "run config (key = value)");
  gen->add_option("--out", out, "manifest path")->required();
  gen->add_option("--count", count, "number of utterances")->required()->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed, "corpus seed (overrides train.seed)");

  auto* tr = app.add_subcommand("train", "train the slot aligner or the CTC baseline");
  tr->add_option("--config", config, "run config (key = value)");
  tr->add_option("--manifest", manifest, "training manifest")->required();
  tr->add_option("--out", out, "output directory")->required();
  tr->add_option("--model", model, "slot|ctc");

  auto* al = app.add_subcommand("align", "align every utterance of a manifest");
  al->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  al->add_option("--manifest", manifest, "manifest to align")->required();
  al->add_option("--tokens", tokens, "all or comma-separated token indices");
  al->add_option("--out", out, "alignment JSONL")->required();

  auto* ev = app.add_subcommand("eval", "score alignments against reference spans");
  ev->add_option("--alignments", alignments, "alignment JSONL")->required();
  ev->add_option("--manifest", manifest, "manifest with reference spans")->required();
  ev->add_option("--ref", ref, "gold|pseudo");
  ev->add_option("--out", out, "report JSON")->required();

  auto* be = app.add_subcommand("bench", "end-to-end comparison on generated suites");
  be->add_option("--config", config, "run config (key = value)");
  be->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 4;
  }

  try {
    if (*gen) return cmd_gen(config, out, count, seed);
    if (*tr) return cmd_train(config, manifest, out, model);
    if (*al) return cmd_align(checkpoint, manifest, tokens, out);
    if (*ev) return cmd_eval(alignments, manifest, ref, out);
    if (*be) return cmd_bench(config, out);
  } catch (const Error& e) {
    std::cerr << "slotalign: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "slotalign: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
