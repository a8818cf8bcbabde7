use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use urbandrive::birdview::HistoryBuffer;
use urbandrive::evaluation::{run_suite, EvalConfig, Report, Scenario};
use urbandrive::expert::{collect, expert_plan, initial_world, CollectConfig, Dataset, ExpertOptions};
use urbandrive::policy::toy::{train_toy, ToyPolicy, DEFAULT_L2};
use urbandrive::policy::wire::{serve, RemotePolicy, DEFAULT_TIMEOUT};
use urbandrive::policy::{
    average_displacement, ConstantVelocity, DegradedPlanner, ExpertPlanner, LabelReplay, Learned, Planner, RasterPolicy,
};
use urbandrive::safety::safe_control;
use urbandrive::tracking::Tracker;
use urbandrive::world::{maps, step_world, RoadMap};

#[derive(Parser)]
#[command(name = "urbandrive", version, about = "Bird-view imitation driving with a safe-set filter")]
struct Cli {
    /// JSON file with `collect` and/or `eval` parameter sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record an expert dataset with noise injection.
    Collect {
        /// Bundled map name or map JSON path.
        #[arg(long)]
        map: String,
        #[arg(long)]
        seed: u64,
        /// Seconds of simulated driving.
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the linear toy policy on one or more datasets.
    TrainToy {
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_L2)]
        l2: f64,
    },
    /// Average displacement error on a dataset's untainted frames.
    EvalOpen {
        /// `toy:FILE`, `remote:HOST:PORT`, `expert` (label replay) or `cv`.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        data: PathBuf,
    },
    /// Closed-loop episodes with infraction metrics.
    EvalClosed {
        /// Scenario JSON path or bundled name.
        #[arg(long)]
        scenario: String,
        /// `expert`, `degraded:NOISE`, `toy:FILE` or `remote:HOST:PORT`.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        no_safety: bool,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Drive the expert for K ticks and write the bird-view raster as PNG.
    Render {
        #[arg(long)]
        map: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        tick: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a trained toy policy over the wire protocol.
    ServeToy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:5555")]
        addr: String,
    },
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Config {
    collect: CollectConfig,
    eval: EvalConfig,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

/// A bundled map name or a path to a map JSON file; returns the map and the
/// name recorded in dataset metadata.
fn load_map(spec: &str) -> Result<(RoadMap, String)> {
    if let Some(json) = maps::bundled_json(spec) {
        return Ok((RoadMap::from_json(json)?, spec.to_string()));
    }
    Ok((RoadMap::load(spec).with_context(|| format!("loading map {spec}"))?, spec.to_string()))
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    if Path::new(spec).exists() {
        return Scenario::load(spec).with_context(|| format!("loading scenario {spec}"));
    }
    Scenario::bundled(spec).with_context(|| format!("no scenario file or bundled scenario named {spec}"))
}

fn raster_policy(spec: &str, h: usize) -> Result<Box<dyn RasterPolicy>> {
    if let Some(file) = spec.strip_prefix("toy:") {
        let toy = ToyPolicy::load(file).with_context(|| format!("loading {file}"))?;
        if toy.h != h {
            bail!("model horizon {} does not match configured horizon {h}", toy.h);
        }
        return Ok(Box::new(toy));
    }
    if let Some(addr) = spec.strip_prefix("remote:") {
        return Ok(Box::new(RemotePolicy::connect(addr, h, DEFAULT_TIMEOUT).with_context(|| format!("connecting to {addr}"))?));
    }
    bail!("unknown raster policy {spec:?}")
}

fn planner(spec: &str, h: usize) -> Result<Box<dyn Planner>> {
    if spec == "expert" {
        return Ok(Box::new(ExpertPlanner::new(h)));
    }
    if let Some(noise) = spec.strip_prefix("degraded:") {
        let noise: f64 = noise.parse().context("degraded planner noise")?;
        return Ok(Box::new(DegradedPlanner::new(h, noise, ExpertOptions::default())));
    }
    Ok(Box::new(Learned(raster_policy(spec, h)?)))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Collect { map, seed, duration, out } => {
            let (road, name) = load_map(&map)?;
            let (ds, _) = collect(Arc::new(road), &name, seed, duration, &config.collect)?;
            ds.write(&out)?;
            println!("{}", serde_json::to_string(&ds.meta.counts)?);
        }
        Command::TrainToy { data, out, l2 } => {
            let mut frames = Vec::new();
            for dir in &data {
                frames.extend(Dataset::read(dir).with_context(|| format!("reading {}", dir.display()))?.frames);
            }
            let toy = train_toy(&frames, l2)?;
            toy.save(&out)?;
            println!("trained on {} untainted frames", frames.iter().filter(|f| !f.noise_tainted).count());
        }
        Command::EvalOpen { policy, data } => {
            let ds = Dataset::read(&data).with_context(|| format!("reading {}", data.display()))?;
            let (h, dt) = (ds.meta.h, ds.meta.dt);
            let mut p: Box<dyn RasterPolicy> = match policy.as_str() {
                "expert" => Box::new(LabelReplay::new(ds.exported())),
                "cv" => Box::new(ConstantVelocity { h, dt }),
                spec => raster_policy(spec, h)?,
            };
            let ade = average_displacement(p.as_mut(), ds.exported())?;
            println!("{}", serde_json::json!({ "policy": policy, "frames": ds.exported().count(), "ade": ade }));
        }
        Command::EvalClosed { scenario, policy, no_safety, episodes, report } => {
            let sc = load_scenario(&scenario)?;
            let mut p = planner(&policy, config.eval.h)?;
            let logs = run_suite(&sc, p.as_mut(), &config.eval, !no_safety, episodes)?;
            let r = Report::new(&sc.name, &policy, !no_safety, &logs)?;
            write_json(&report, &r)?;
            println!(
                "{}: success {:.1}%, {} collisions, {} out-of-lane over {:.3} km",
                sc.name,
                100.0 * r.success_rate,
                r.collisions,
                r.out_of_lane,
                r.distance_km
            );
        }
        Command::Render { map, seed, tick, out } => {
            let (road, _) = load_map(&map)?;
            let cfg = &config.collect;
            let mut world = initial_world(Arc::new(road), seed, cfg)?;
            let mut tracker = Tracker::new(cfg.tracker, cfg.world.limits);
            let mut history = HistoryBuffer::new(&cfg.render);
            history.push(world.clone());
            while world.tick < tick {
                let u = match expert_plan(&world, cfg.h, &ExpertOptions::default()) {
                    Ok(plan) => tracker.track(&plan, world.ego.speed),
                    Err(_) => tracker.brake(),
                };
                let u = match &cfg.safety {
                    Some(p) => safe_control(&world, u, p).control,
                    None => u,
                };
                world = step_world(&world, u);
                history.push(world.clone());
            }
            let raster = history.render(&cfg.render)?;
            let (w, h) = (raster.width() as u32, raster.height() as u32);
            image::save_buffer(&out, raster.as_bytes(), w, h, image::ExtendedColorType::Rgb8)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::ServeToy { model, addr } => {
            let toy = ToyPolicy::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("serving {} on {}", model.display(), listener.local_addr()?);
            serve(listener, move || toy.clone())?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
