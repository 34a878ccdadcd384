// gestinv command-line tool.
//
// Exit codes: 0 success, 1 other failures (I/O included), 2 usage error,
// 3 invalid input (malformed files, out-of-range values), 4 engine failure
// (inversion or non-finite values). With --json, failures are reported on
// stderr as {"error": {"code", "message", "exit_code", "step"?}}.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>

#include "gestinv/error.hpp"
#include "gestinv/frechet.hpp"
#include "gestinv/motion_io.hpp"
#include "gestinv/serialization.hpp"
#include "pipeline/pipeline.hpp"
#include "service/http_api.hpp"

namespace fs = std::filesystem;
using namespace gestinv;

namespace {

struct Failure {
  const char* code;
  int exit_code;
  std::string message;
  std::optional<int> step;
};

int report(const Failure& f, bool json) {
  if (json) {
    Json j{{"code", f.code}, {"message", f.message}, {"exit_code", f.exit_code}};
    if (f.step) j["step"] = *f.step;
    std::cerr << Json{{"error", j}}.dump() << '\n';
  } else {
    std::cerr << "gestinv: " << f.code << " error: " << f.message << '\n';
  }
  return f.exit_code;
}

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

MotionSequence read_motion(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".bvh") return import_bvh(path);
  if (ext == ".json") return motion_from_json(read_json_file(path.string()));
  return load_motion(path);
}

void write_motion(const MotionSequence& m, const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".bvh") {
    export_bvh(m, path);
  } else if (ext == ".json") {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << motion_to_json(m).dump() << '\n';
  } else {
    save_motion(m, path);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Checkpoint read_checkpoint(const fs::path& path) { return load_checkpoint(path); }

std::optional<ConditionVector> maybe_condition(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return pipeline::load_condition(path);
}

SamplerConfig sampler_from(double p, const std::string& mode, std::uint64_t seed) {
  SamplerConfig s;
  s.mixing_p = p;
  s.noise_mode = noise_mode_from_string(mode);
  s.noise_seed = seed;
  s.validate();
  return s;
}

service::HttpApi* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gestinv: invertible diffusion toolkit for skeletal motion"};
  app.fallthrough();
  app.require_subcommand(1);
  bool json_errors = false;
  app.add_flag("--json", json_errors, "Report failures as JSON on stderr");

  std::function<void()> action;

  // Sampler flags shared by several commands.
  struct SamplerOpts {
    double p = 0.93;
    std::string mode = "deterministic";
    std::uint64_t seed = 0;
  };
  auto add_sampler = [](CLI::App* sub, SamplerOpts& o) {
    sub->add_option("--mixing-p", o.p, "Coupling mixing coefficient in (0.5, 1]")
        ->capture_default_str();
    sub->add_option("--noise-mode", o.mode, "deterministic | recorded")
        ->check(CLI::IsMember({"deterministic", "recorded"}))
        ->capture_default_str();
    sub->add_option("--noise-seed", o.seed, "Seed of recorded-mode draws")->capture_default_str();
  };

  // train
  pipeline::TrainRequest train_req;
  std::string train_out, train_loss_out;
  auto* train = app.add_subcommand("train", "Train the toy denoiser on the synthetic corpus");
  train->add_option("--corpus-seed", train_req.corpus_seed)->capture_default_str();
  train->add_option("--epochs", train_req.epochs)->check(CLI::NonNegativeNumber)->capture_default_str();
  train->add_option("--clips", train_req.clips)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--frames", train_req.frames)->check(CLI::Range(2, 100000))->capture_default_str();
  train->add_option("--steps", train_req.total_steps, "Diffusion steps of the training schedule")
      ->check(CLI::Range(2, 10000))
      ->capture_default_str();
  train->add_option("--lr", train_req.lr)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--seed", train_req.init_seed, "Weight init seed")->capture_default_str();
  train->add_option("--shuffle-seed", train_req.shuffle_seed)->capture_default_str();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--loss-out", train_loss_out, "Optional CSV of per-update losses");
  train->callback([&] {
    action = [&] {
      auto outcome = pipeline::train_model(train_req);
      save_checkpoint(outcome.checkpoint.params, outcome.checkpoint.schedule, train_out);
      if (!train_loss_out.empty()) {
        std::string csv = "update,loss\n";
        char buf[64];
        for (std::size_t i = 0; i < outcome.loss_history.size(); ++i) {
          std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, outcome.loss_history[i]);
          csv += buf;
        }
        write_text(train_loss_out, csv);
      }
      if (!outcome.loss_history.empty()) {
        std::printf("trained %zu updates, final loss %.6f\n", outcome.loss_history.size(),
                    outcome.loss_history.back());
      }
    };
  });

  // generate
  std::string gen_ckpt, gen_cond, gen_out, gen_ledger;
  std::uint64_t gen_seed = 0;
  SamplerOpts gen_sampler;
  auto* gen = app.add_subcommand("generate", "Coupled generation from seeded noise");
  gen->add_option("--ckpt", gen_ckpt)->required();
  gen->add_option("--condition", gen_cond)->required();
  gen->add_option("--seed", gen_seed, "Seed of x_T")->capture_default_str();
  gen->add_option("--out", gen_out, "Motion path (.gmo, .bvh or .json)")->required();
  gen->add_option("--ledger", gen_ledger, "Write the noise ledger here");
  add_sampler(gen, gen_sampler);
  gen->callback([&] {
    action = [&] {
      const auto model = read_checkpoint(gen_ckpt);
      const auto cond = pipeline::load_condition(gen_cond);
      NoiseLedger ledger = NoiseLedger::deterministic();
      const auto motion = pipeline::generate_motion(
          model, cond, gen_seed, sampler_from(gen_sampler.p, gen_sampler.mode, gen_sampler.seed),
          &ledger);
      write_motion(motion, gen_out);
      if (!gen_ledger.empty()) ledger.save(gen_ledger);
    };
  });

  // invert
  std::string inv_ckpt, inv_motion, inv_cond, inv_out;
  int inv_steps = 50;
  SamplerOpts inv_sampler;
  auto* inv = app.add_subcommand("invert", "Reconstruct the noise pair of a motion");
  inv->add_option("--ckpt", inv_ckpt)->required();
  inv->add_option("--motion", inv_motion)->required();
  inv->add_option("--condition", inv_cond, "Defaults to the condition stored in the motion");
  inv->add_option("--steps", inv_steps, "Steps of the respaced inversion schedule")
      ->capture_default_str();
  inv->add_option("--out", inv_out)->required();
  inv->add_option("--mixing-p", inv_sampler.p)->capture_default_str();
  inv->callback([&] {
    action = [&] {
      const auto model = read_checkpoint(inv_ckpt);
      const auto motion = read_motion(inv_motion);
      const auto cond = pipeline::resolve_condition(maybe_condition(inv_cond), motion);
      const auto noise = pipeline::invert_motion(model, motion, cond, inv_steps,
                                                 sampler_from(inv_sampler.p, "deterministic", 0));
      save_noise_pair(noise, inv_out);
    };
  });

  // regen-style
  std::string rs_ckpt, rs_motion, rs_old, rs_new, rs_out;
  int rs_steps = 50;
  SamplerOpts rs_sampler;
  auto* rs = app.add_subcommand("regen-style", "Invert a motion and regenerate it under a new condition");
  rs->add_option("--ckpt", rs_ckpt)->required();
  rs->add_option("--motion", rs_motion)->required();
  rs->add_option("--old-cond", rs_old, "Defaults to the condition stored in the motion");
  rs->add_option("--new-cond", rs_new)->required();
  rs->add_option("--inv-steps", rs_steps)->capture_default_str();
  rs->add_option("--out", rs_out)->required();
  rs->add_option("--mixing-p", rs_sampler.p)->capture_default_str();
  rs->callback([&] {
    action = [&] {
      const auto model = read_checkpoint(rs_ckpt);
      const auto motion = read_motion(rs_motion);
      const auto old_c = pipeline::resolve_condition(maybe_condition(rs_old), motion);
      const auto new_c = pipeline::load_condition(rs_new);
      const auto out = pipeline::regenerate_style(model, motion, old_c, new_c, rs_steps,
                                                  sampler_from(rs_sampler.p, "deterministic", 0));
      write_motion(out, rs_out);
    };
  });

  // edit
  std::string ed_ckpt, ed_motion, ed_cond, ed_spec, ed_out, ed_trace, ed_csv, ed_grad_path;
  std::optional<std::uint64_t> ed_seed;
  pipeline::EditRequest ed_req;
  bool ed_no_normalize = false, ed_no_renorm = false, ed_timing = false;
  SamplerOpts ed_sampler;
  ed_grad_path = to_string(ed_req.optimizer.grad_path);
  auto* ed = app.add_subcommand("edit", "Optimize the input noise of a motion against an edit spec");
  ed->add_option("--ckpt", ed_ckpt)->required();
  auto* ed_motion_opt = ed->add_option("--motion", ed_motion, "Motion to edit (inverted first)");
  auto* ed_seed_opt = ed->add_option("--seed", ed_seed, "Start from seeded Gaussian noise instead");
  ed_motion_opt->excludes(ed_seed_opt);
  ed->add_option("--condition", ed_cond, "Defaults to the condition stored in the motion");
  ed->add_option("--spec", ed_spec, "EditSpec JSON (targets in degrees)")->required();
  ed->add_option("--steps", ed_req.optimizer.steps, "Optimization steps (>= 1)")
      ->check(CLI::Range(1, 100000))
      ->capture_default_str();
  ed->add_option("--lr", ed_req.optimizer.lr)->check(CLI::PositiveNumber)->capture_default_str();
  ed->add_option("--inv-steps", ed_req.inv_steps, "Steps of the respaced editing schedule")
      ->capture_default_str();
  ed->add_option("--grad-path", ed_grad_path, "inversion_recompute | full_cache")
      ->check(CLI::IsMember({"inversion_recompute", "full_cache"}))
      ->capture_default_str();
  ed->add_flag("--no-normalize", ed_no_normalize, "Use the raw gradient");
  ed->add_flag("--no-renorm", ed_no_renorm, "Do not project the noise back to the Gaussian shell");
  ed->add_flag("--tie-arms", ed_req.optimizer.tie_arms, "Reset y_T := x_T after each update");
  ed->add_flag("--early-stop", ed_req.optimizer.early_stop, "Stop on a 1% plateau");
  ed->add_option("--out", ed_out)->required();
  ed->add_option("--trace", ed_trace, "JSON-lines trace");
  ed->add_option("--trace-csv", ed_csv, "CSV trace summary");
  ed->add_flag("--trace-timing", ed_timing, "Include wall time in trace files");
  ed->add_option("--mixing-p", ed_sampler.p)->capture_default_str();
  ed->callback([&] {
    action = [&] {
      if (ed_motion.empty() && !ed_seed) throw UsageError("edit needs --motion or --seed");
      const auto model = read_checkpoint(ed_ckpt);
      ed_req.optimizer.grad_normalize = !ed_no_normalize;
      ed_req.optimizer.renorm_noise = !ed_no_renorm;
      ed_req.optimizer.grad_path = grad_path_from_string(ed_grad_path);
      ed_req.sampler = sampler_from(ed_sampler.p, "deterministic", 0);
      ed_req.specs = edit_specs_from_json(read_json_file(ed_spec), Skeleton::default_skeleton());
      pipeline::EditOutcome outcome = [&] {
        if (ed_seed) {
          if (ed_cond.empty()) throw UsageError("edit --seed needs --condition");
          return pipeline::edit_from_noise(model, pipeline::load_condition(ed_cond), *ed_seed, ed_req);
        }
        const auto motion = read_motion(ed_motion);
        const auto cond = pipeline::resolve_condition(maybe_condition(ed_cond), motion);
        return pipeline::edit_motion(model, motion, cond, ed_req);
      }();
      if (!ed_trace.empty()) write_text(ed_trace, trace_to_jsonl(outcome.trace, ed_timing));
      if (!ed_csv.empty()) write_text(ed_csv, trace_to_csv(outcome.trace, ed_timing));
      if (outcome.trace.error) throw NonFiniteError(*outcome.trace.error, -1, 0.0);
      write_motion(outcome.motion, ed_out);
      const auto& last = outcome.trace.records.back();
      std::printf("steps %d, loss %.6g -> %.6g (relative %.6f)\n", last.s,
                  outcome.trace.records.front().loss, last.loss, last.relative_loss);
    };
  });

  // metrics
  std::string met_a, met_b;
  auto* met = app.add_subcommand("metrics", "Frechet statistic between two motions");
  met->add_option("--a", met_a)->required();
  met->add_option("--b", met_b)->required();
  met->callback([&] {
    action = [&] {
      std::printf("%.17g\n", stat_frechet(read_motion(met_a), read_motion(met_b)));
    };
  });

  // convert
  std::string conv_in, conv_out;
  auto* conv = app.add_subcommand("convert", "Convert between .gmo, .bvh and .json motions");
  conv->add_option("--in", conv_in)->required();
  conv->add_option("--out", conv_out)->required();
  conv->callback([&] { action = [&] { write_motion(read_motion(conv_in), conv_out); }; });

  // corpus
  std::uint64_t corpus_seed = 7;
  std::size_t corpus_clips = 4, corpus_frames = 60;
  std::string corpus_dir;
  auto* corpus = app.add_subcommand("corpus", "Export synthetic corpus clips with their conditions");
  corpus->add_option("--seed", corpus_seed)->capture_default_str();
  corpus->add_option("--clips", corpus_clips)->check(CLI::PositiveNumber)->capture_default_str();
  corpus->add_option("--frames", corpus_frames)->check(CLI::Range(2, 100000))->capture_default_str();
  corpus->add_option("--out-dir", corpus_dir)->required();
  corpus->callback([&] {
    action = [&] {
      fs::create_directories(corpus_dir);
      const auto c = synth_corpus(corpus_seed, corpus_clips, corpus_frames);
      for (std::size_t i = 0; i < c.clips.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "clip_%03zu", i);
        save_motion(c.clips[i].motion, fs::path(corpus_dir) / (std::string(stem) + ".gmo"));
        pipeline::save_condition(c.clips[i].condition,
                                 fs::path(corpus_dir) / (std::string(stem) + ".cond.json"));
      }
    };
  });

  // serve
  std::string srv_host = "127.0.0.1", srv_ckpt, srv_store;
  int srv_port = 8080;
  std::size_t srv_workers = 2;
  auto* srv = app.add_subcommand("serve", "Run the HTTP job service");
  srv->add_option("--port", srv_port)->check(CLI::Range(0, 65535))->capture_default_str();
  srv->add_option("--host", srv_host)->capture_default_str();
  srv->add_option("--ckpt", srv_ckpt, "Checkpoint to serve (train jobs can add one later)");
  srv->add_option("--workers", srv_workers)->check(CLI::PositiveNumber)->capture_default_str();
  srv->add_option("--store", srv_store, "Storage directory (default: $GESTINV_STORE)");
  srv->callback([&] {
    action = [&] {
      std::shared_ptr<const Checkpoint> model;
      if (!srv_ckpt.empty()) model = std::make_shared<const Checkpoint>(read_checkpoint(srv_ckpt));
      service::ServiceConfig cfg;
      cfg.workers = srv_workers;
      cfg.store_dir = srv_store.empty() ? service::store_dir_from_env() : fs::path(srv_store);
      service::JobService svc(cfg, model);
      service::HttpApi api(svc);
      g_server = &api;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      int port = srv_port;
      if (port == 0) {
        port = api.bind_any_port(srv_host);
        if (port < 0) throw std::runtime_error("cannot bind " + srv_host);
        std::printf("listening on http://%s:%d\n", srv_host.c_str(), port);
        std::fflush(stdout);
        api.listen_after_bind();
      } else {
        std::printf("listening on http://%s:%d\n", srv_host.c_str(), port);
        std::fflush(stdout);
        if (!api.listen(srv_host, port)) {
          throw std::runtime_error("cannot listen on " + srv_host + ":" + std::to_string(port));
        }
      }
      g_server = nullptr;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report({"usage", 2, e.what(), std::nullopt}, json_errors);
  }

  try {
    action();
  } catch (const UsageError& e) {
    return report({"usage", 2, e.what(), std::nullopt}, json_errors);
  } catch (const InversionError& e) {
    return report({"inversion", 4, e.what(), e.step()}, json_errors);
  } catch (const NonFiniteError& e) {
    std::optional<int> step;
    if (e.step() >= 0) step = e.step();
    return report({"non_finite", 4, e.what(), step}, json_errors);
  } catch (const ParseError& e) {
    return report({"parse", 3, e.what(), std::nullopt}, json_errors);
  } catch (const ShapeError& e) {
    return report({"invalid_input", 3, e.what(), std::nullopt}, json_errors);
  } catch (const std::invalid_argument& e) {
    return report({"invalid_input", 3, e.what(), std::nullopt}, json_errors);
  } catch (const std::out_of_range& e) {
    return report({"invalid_input", 3, e.what(), std::nullopt}, json_errors);
  } catch (const std::exception& e) {
    return report({"failure", 1, e.what(), std::nullopt}, json_errors);
  }
  return 0;
}
