#include <CLI11.hpp>

#include "radiff/cli/commands.hpp"

namespace radiff::cli {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"radiff: latent diffusion for 4D radar point clouds"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed threaded to every random number consumer");

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic RDF dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--frames", synth.frames, "Number of frames");
  s->add_option("--profile", synth.profile, "Range profile")->check(CLI::IsMember({"vod", "truckscenes", "toy"}));
  s->add_flag("--force", synth.force, "Replace a non-empty output directory");

  TrainOptions tv, tl;
  auto* v = app.add_subcommand("train-vae", "Train the point cloud VAE of a task");
  auto* l = app.add_subcommand("train-ldm", "Train the conditional latent diffusion model of a task");
  for (auto [cmd, o] : {std::pair{v, &tv}, std::pair{l, &tl}}) {
    cmd->add_option("--task", o->task, "fg or bg")->required()->check(CLI::IsMember({"fg", "bg"}));
    cmd->add_option("--data", o->data, "Training RDF directory")->required();
    cmd->add_option("--config", o->config, "Config file (defaults when omitted)");
    cmd->add_option("--out", o->out, "Output checkpoint")->required();
    cmd->add_option("--epochs", o->epochs, "Override the configured epochs");
  }
  l->add_option("--vae", tl.vae, "Frozen VAE checkpoint")->required();

  GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Sample radar clouds for condition frames");
  g->add_option("--task", gen.task, "fg or bg")->required()->check(CLI::IsMember({"fg", "bg"}));
  g->add_option("--ldm", gen.ldm, "LDM checkpoint")->required();
  g->add_option("--vae", gen.vae, "VAE checkpoint")->required();
  g->add_option("--cond", gen.cond, "Condition RDF directory")->required();
  g->add_option("--config", gen.config, "Config file (defaults when omitted)");
  g->add_option("--steps", gen.steps, "Diffusion steps (the trained schedule length)");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_flag("--force", gen.force, "Replace a non-empty output directory");

  FuseOptions fuse;
  auto* f = app.add_subcommand("fuse", "Merge foreground and background frames");
  f->add_option("--fg", fuse.fg, "Foreground RDF directory")->required();
  f->add_option("--bg", fuse.bg, "Background RDF directory")->required();
  f->add_option("--out", fuse.out, "Output directory")->required();
  f->add_flag("--force", fuse.force, "Replace a non-empty output directory");

  AugmentOptions aug;
  auto* a = app.add_subcommand("augment", "GT-sampling and global augmentation of a dataset");
  a->add_option("--data", aug.data, "Input RDF directory")->required();
  a->add_option("--config", aug.config, "Config file (defaults when omitted)");
  a->add_option("--out", aug.out, "Output directory")->required();
  a->add_flag("--force", aug.force, "Replace a non-empty output directory");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Compare generated frames against real frames");
  e->add_option("--real", ev.real, "Real RDF directory")->required();
  e->add_option("--gen", ev.generated, "Generated RDF directory")->required();
  e->add_option("--config", ev.config, "Config file (defaults when omitted)");
  e->add_option("--out", ev.out, "JSON report path (stdout when omitted)");

  fs::path config_path;
  auto* c = app.add_subcommand("config", "Print a config in canonical form");
  c->add_option("--config", config_path, "Config file (defaults when omitted)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }

  try {
    if (s->parsed()) {
      synth.seed = seed;
      cmd_synth(synth, err);
    } else if (v->parsed()) {
      tv.seed = seed;
      cmd_train_vae(tv, err);
    } else if (l->parsed()) {
      tl.seed = seed;
      cmd_train_ldm(tl, err);
    } else if (g->parsed()) {
      gen.seed = seed;
      cmd_generate(gen, err);
    } else if (f->parsed()) {
      cmd_fuse(fuse, err);
    } else if (a->parsed()) {
      aug.seed = seed;
      cmd_augment(aug, err);
    } else if (e->parsed()) {
      const auto report = cmd_eval(ev);
      if (ev.out.empty()) out << report << "\n";
    } else if (c->parsed()) {
      out << echo_config(config_or_defaults(config_path));
    }
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace radiff::cli
