//! Command-line front end: scene generation/validation, single episodes
//! with traces, suites over scenes × seeds × policies, and report emission.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sentinel_sim::harness::{
    run_episode, write_csv, write_summary, EpisodeConfig, PolicyAssignment, SuiteCell, SuiteSpec,
};
use sentinel_sim::map_tool::build_waypoint_graph;
use sentinel_sim::scene::{
    generate_scene, load_scene, save_scene, validate_scene, SceneProfile, SceneSpec, SentinelKind,
};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "sentinel", about = "Rendezvous-under-patrol simulator and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Stationary,
    Patrolling,
}

impl From<KindArg> for SentinelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Stationary => SentinelKind::Stationary,
            KindArg::Patrolling => SentinelKind::Patrolling,
        }
    }
}

#[derive(Args)]
struct EpisodeArgs {
    /// Number of agents to take from the roster
    #[arg(long, default_value_t = 5)]
    agents: usize,
    /// Number of sentinels to activate
    #[arg(long, default_value_t = 10)]
    sentinels: usize,
    /// Restrict the active sentinels to one kind
    #[arg(long, value_enum)]
    sentinel_kind: Option<KindArg>,
    /// Steps before the episode times out
    #[arg(long, default_value_t = 1500)]
    horizon: u32,
    /// Agents detect sentinels exactly within view range
    #[arg(long, default_value_t = false)]
    oracle_perception: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grid-city scene file
    GenScene {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        blocks_x: usize,
        #[arg(long, default_value_t = 4)]
        blocks_y: usize,
        #[arg(long, default_value_t = 70.0)]
        block_size: f64,
        #[arg(long, default_value_t = 60)]
        places: usize,
        #[arg(long, default_value_t = 5)]
        agents: usize,
        #[arg(long, default_value_t = 10)]
        sentinels: usize,
        #[arg(long, value_enum, default_value_t = KindArg::Stationary)]
        sentinel_kind: KindArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a scene file against every structural invariant
    Validate {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Run one episode and write its trace
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// Policy name, or a comma-separated per-agent list
        #[arg(long, default_value = "cosar")]
        policy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        episode: EpisodeArgs,
        /// Output directory for the trace and metrics
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run scenes × seeds × policies and write results.csv + summary.txt
    Suite {
        /// Scene file; repeat for multiple scenes
        #[arg(long, required = true)]
        scene: Vec<PathBuf>,
        /// Policy name; repeat for multiple policies
        #[arg(long, required = true)]
        policy: Vec<String>,
        /// First seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds starting at --seed
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[command(flatten)]
        episode: EpisodeArgs,
        /// Worker threads (0 = all cores, 1 = sequential)
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-aggregate a results CSV into a text summary
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenScene {
            out,
            blocks_x,
            blocks_y,
            block_size,
            places,
            agents,
            sentinels,
            sentinel_kind,
            seed,
        } => {
            let profile = SceneProfile {
                blocks_x,
                blocks_y,
                block_size_m: block_size,
                n_places: places,
                n_agents: agents,
                n_sentinels: sentinels,
                sentinel_kind: sentinel_kind.into(),
            };
            let scene = generate_scene(&profile, seed)?;
            save_scene(&scene, &out)?;
            println!(
                "wrote {} ({} places, {} agents, {} sentinels)",
                out.display(),
                scene.places.len(),
                scene.agent_roster.len(),
                scene.sentinel_roster.len()
            );
            Ok(())
        }
        Command::Validate { scene } => {
            let loaded = load_scene(&scene);
            match loaded {
                Ok(s) => {
                    let report = validate_scene(&s);
                    if report.is_empty() {
                        println!("ok: no violations");
                    } else {
                        for v in &report {
                            println!("{v}");
                        }
                    }
                    Ok(())
                }
                Err(e) => {
                    // print the violations but exit nonzero: the file is unusable
                    eprintln!("{e}");
                    bail!("scene failed validation")
                }
            }
        }
        Command::Run {
            scene,
            policy,
            seed,
            episode,
            out,
        } => {
            let scene = load_scene(&scene)?;
            let graph = build_waypoint_graph(&scene);
            fs::create_dir_all(&out)?;
            let trace_path = out.join(format!("trace-{}-{policy}-{seed}.jsonl", scene.name));
            let mut trace = BufWriter::new(fs::File::create(&trace_path)?);
            let cfg = episode_config(&episode, seed, parse_policy(&policy, episode.agents)?);
            let metrics = run_episode(&scene, &graph, &cfg, Some(&mut trace))?;
            trace.flush()?;
            println!(
                "success={} caught_rate={:.3} detected_rate={:.3} time={} distance={:.1} reason={}",
                metrics.success,
                metrics.caught_rate,
                metrics.detected_rate,
                metrics.time_cost,
                metrics.distance,
                metrics.failure_reason
            );
            println!("trace: {}", trace_path.display());
            Ok(())
        }
        Command::Suite {
            scene,
            policy,
            seed,
            seeds,
            episode,
            jobs,
            out,
        } => {
            let mut scenes: Vec<SceneSpec> = Vec::new();
            for path in &scene {
                scenes.push(load_scene(path).with_context(|| path.display().to_string())?);
            }
            let spec = SuiteSpec {
                seeds: (seed..seed + seeds).collect(),
                policies: policy,
                base: episode_config(&episode, seed, PolicyAssignment::Uniform("cosar".into())),
                jobs,
            };
            let cells = sentinel_sim::harness::run_suite(&scenes, &spec);
            fs::create_dir_all(&out)?;
            write_reports(&cells, &out)?;
            // exit code 0 on completion regardless of episode outcomes
            Ok(())
        }
        Command::Report { results, out } => {
            let cells = read_results_csv(&results)?;
            fs::create_dir_all(&out)?;
            let mut summary = BufWriter::new(fs::File::create(out.join("summary.txt"))?);
            write_summary(&cells, &mut summary)?;
            summary.flush()?;
            let mut stdout = std::io::stdout().lock();
            write_summary(&cells, &mut stdout)?;
            Ok(())
        }
    }
}

fn episode_config(args: &EpisodeArgs, seed: u64, policies: PolicyAssignment) -> EpisodeConfig {
    EpisodeConfig {
        n_agents: args.agents,
        n_sentinels: args.sentinels,
        sentinel_kind: args.sentinel_kind.map(Into::into),
        horizon: args.horizon,
        seed,
        oracle_perception: args.oracle_perception,
        policies,
    }
}

fn parse_policy(s: &str, n_agents: usize) -> Result<PolicyAssignment> {
    if s.contains(',') {
        let list: Vec<String> = s.split(',').map(str::to_string).collect();
        if list.len() != n_agents {
            bail!("--policy lists {} names for {n_agents} agents", list.len());
        }
        Ok(PolicyAssignment::PerAgent(list))
    } else {
        Ok(PolicyAssignment::Uniform(s.to_string()))
    }
}

fn write_reports(cells: &[SuiteCell], out: &Path) -> Result<()> {
    let csv_path = out.join("results.csv");
    let mut csv = BufWriter::new(fs::File::create(&csv_path)?);
    write_csv(cells, &mut csv)?;
    csv.flush()?;
    let summary_path = out.join("summary.txt");
    let mut summary = BufWriter::new(fs::File::create(&summary_path)?);
    write_summary(cells, &mut summary)?;
    summary.flush()?;
    let mut stdout = std::io::stdout().lock();
    write_summary(cells, &mut stdout)?;
    println!("results: {}", csv_path.display());
    Ok(())
}

/// Parse a results CSV back into cells for re-aggregation.
fn read_results_csv(path: &Path) -> Result<Vec<SuiteCell>> {
    use sentinel_sim::harness::{EpisodeMetrics, FailureReason};
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().context("empty results file")?;
    if header != sentinel_sim::harness::CSV_HEADER {
        bail!("unexpected CSV header: {header}");
    }
    let mut cells = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 9 {
            bail!("line {}: expected 9 columns", ln + 2);
        }
        let outcome = if cols[8].starts_with("error:") {
            Err(cols[8].trim_start_matches("error:").to_string())
        } else {
            let reason = match cols[8] {
                "none" => FailureReason::None,
                "caught" => FailureReason::Caught,
                "timeout" => FailureReason::Timeout,
                "wrong_place_signal" => FailureReason::WrongPlaceSignal,
                other => bail!("line {}: unknown failure reason {other}", ln + 2),
            };
            Ok(EpisodeMetrics {
                success: cols[3].parse()?,
                caught_rate: cols[4].parse()?,
                detected_rate: cols[5].parse()?,
                time_cost: cols[6].parse()?,
                distance: cols[7].parse()?,
                failure_reason: reason,
            })
        };
        cells.push(SuiteCell {
            scene: cols[0].to_string(),
            seed: cols[1].parse()?,
            policy: cols[2].to_string(),
            outcome,
        });
    }
    Ok(cells)
}
