//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input or schema error, 3 no feasible plan.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{
    validate_plan_shape, validate_state, ClusterState, ExecutionPlan, Policy, Profile,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_step, plan_memory};
use crate::planner::{select_policy, Interval, PlanDecision, SearchConfig};
use crate::simulator::{compare_policies, run_simulation, Comparison, Scenario, SimPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ftplan",
    version,
    about = "Fault-tolerance planner and failure simulator for pipeline/data-parallel training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Re-plan after the faults recorded in a cluster state.
    Plan {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        state: PathBuf,
        /// DP degree range `min:max`.
        #[arg(long)]
        dp_range: Option<Interval>,
        /// Stage-count range `min:max`.
        #[arg(long)]
        pp_range: Option<Interval>,
        /// Expected seconds until the next fault.
        #[arg(long)]
        residence: Option<f64>,
        #[arg(long)]
        lookahead: Option<usize>,
        /// Directory for decision.json, plan.json and manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a failure scenario and compare policies.
    Simulate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds starting at the base seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Run only this policy instead of the comparison.
        #[arg(long)]
        policy: Option<SimPolicy>,
    },
    /// Step time, memory and synchronization estimate for a plan.
    Estimate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        plan: PathBuf,
    },
    /// Check input files against their schemas and invariants.
    Validate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestInput {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to reproduce a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<ManifestInput>,
    pub seeds: Vec<u64>,
    pub options: serde_json::Value,
    pub out_dir: PathBuf,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            inputs: Vec::new(),
            seeds: Vec::new(),
            options: serde_json::Value::Null,
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.push(ManifestInput {
            role: role.into(),
            path: fs::canonicalize(path)?,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_infeasible() {
        EXIT_INFEASIBLE
    } else {
        EXIT_INPUT
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("FTPLAN_LOG"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok((text, code)) => {
            print!("{text}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command, returning its report and exit code.
pub fn execute(command: Command) -> Result<(String, i32)> {
    match command {
        Command::Plan {
            profile,
            state,
            dp_range,
            pp_range,
            residence,
            lookahead,
            out,
        } => {
            let mut cfg = SearchConfig {
                dp_range,
                pp_range,
                max_faults_lookahead: lookahead,
                ..SearchConfig::default()
            };
            if let Some(r) = residence {
                if r.is_nan() || r <= 0.0 {
                    return Err(Error::InvalidInput("--residence must be positive".into()));
                }
                cfg.expected_residence_seconds = r;
            }
            cmd_plan(&profile, &state, &cfg, out.as_deref()).map(|t| (t, EXIT_OK))
        }
        Command::Simulate {
            profile,
            scenario,
            out,
            seed,
            seeds,
            policy,
        } => cmd_simulate(&profile, &scenario, &out, seed, seeds, policy).map(|t| (t, EXIT_OK)),
        Command::Estimate { profile, plan } => cmd_estimate(&profile, &plan),
        Command::Validate {
            profile,
            plan,
            state,
            scenario,
        } => cmd_validate(
            &profile,
            plan.as_deref(),
            state.as_deref(),
            scenario.as_deref(),
        ),
    }
}

fn load_state(path: &Path, profile: &Profile) -> Result<ClusterState> {
    let state = ClusterState::load(path)?;
    let v = validate_state(&state, profile);
    if !v.is_empty() {
        let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidInput(format!(
            "invalid cluster state: {}",
            msgs.join("; ")
        )));
    }
    Ok(state)
}

pub fn cmd_plan(
    profile_path: &Path,
    state_path: &Path,
    cfg: &SearchConfig,
    out: Option<&Path>,
) -> Result<String> {
    let profile = Profile::load(profile_path)?;
    let state = load_state(state_path, &profile)?;
    let decision = select_policy(&state, &profile, cfg)?;
    let report = render_decision(&decision, &state);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut manifest = RunManifest::new("plan", dir);
        manifest.input("profile", profile_path)?;
        manifest.input("state", state_path)?;
        manifest.options = serde_json::to_value(cfg)?;
        write_json(&dir.join("decision.json"), &decision)?;
        write_json(&dir.join("plan.json"), &decision.chosen)?;
        manifest.outputs = vec!["decision.json".into(), "plan.json".into()];
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    Ok(report)
}

fn render_layout(out: &mut String, plan: &ExecutionPlan, placement: Option<&[usize]>) {
    for (p, ranges) in plan.layer_assignment.iter().enumerate() {
        let _ = writeln!(
            out,
            "  pipeline {p}: {} micro-batches",
            plan.batch_assignment.get(p).copied().unwrap_or(0)
        );
        let _ = writeln!(out, "    {:>5}  {:>10}  {:>6}", "stage", "layers", "node");
        for (s, r) in ranges.iter().enumerate() {
            let node = plan
                .slot_of(crate::domain::StageCoord {
                    pipeline: p,
                    stage: s,
                })
                .and_then(|slot| placement.and_then(|pl| pl.get(slot)))
                .map_or("-".to_string(), ToString::to_string);
            let _ = writeln!(out, "    {s:>5}  {:>10}  {node:>6}", r.to_string());
        }
    }
    if plan.policy == Policy::DataRerouting {
        let _ = writeln!(out, "  failed per stage: {:?}", plan.failure_distribution);
    }
}

pub fn render_decision(d: &PlanDecision, state: &ClusterState) -> String {
    let mut out = String::new();
    if d.retained {
        let _ = writeln!(out, "no fault; current plan retained");
    }
    let _ = writeln!(out, "policy: {}", d.chosen.policy);
    let _ = writeln!(out, "shape: {}", d.chosen.parallel);
    let placement = match &d.transfer {
        Some(t) => t.placement(d.chosen.node_count()),
        None => state.placement(),
    };
    let _ = writeln!(out, "layout:");
    render_layout(&mut out, &d.chosen, Some(&placement));
    let _ = writeln!(
        out,
        "estimated step time: {:.6} s (compute {:.6} s, sync {:.6} s over {} rounds)",
        d.step.total_seconds, d.step.compute_seconds, d.step.sync_seconds, d.step.sync_rounds
    );
    let _ = writeln!(
        out,
        "estimated transition time: {:.6} s",
        d.estimated_transition_seconds
    );
    if let Some(t) = &d.transfer {
        let _ = writeln!(
            out,
            "weight transfer: {} layers moved, {:.6} s",
            t.layers_moved(),
            t.transfer_seconds
        );
    }
    let _ = writeln!(out, "objective: {:.6} samples/s", d.objective_value);
    if d.rejected_alternatives.is_empty() {
        let _ = writeln!(out, "rejected alternatives: none");
    } else {
        let _ = writeln!(out, "rejected alternatives:");
        for r in &d.rejected_alternatives {
            let j = r
                .objective_value
                .map_or("n/a".to_string(), |j| format!("{j:.6}"));
            let _ = writeln!(out, "  {}: objective {j} ({})", r.policy, r.reason);
            if let Some(s) = &r.summary {
                let _ = writeln!(out, "    {s}");
            }
        }
    }
    out
}

pub fn cmd_estimate(profile_path: &Path, plan_path: &Path) -> Result<(String, i32)> {
    let profile = Profile::load(profile_path)?;
    let plan: ExecutionPlan = crate::domain::parse_json(&fs::read_to_string(plan_path)?)?;
    let v = validate_plan_shape(&plan, profile.num_layers);
    if !v.is_empty() {
        let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
        return Err(Error::NoFeasiblePlan(format!(
            "invalid plan: {}",
            msgs.join("; ")
        )));
    }
    let step = estimate_step(&plan, &profile)?;
    let mut out = String::new();
    let _ = writeln!(out, "plan: {}", plan.summary());
    let _ = writeln!(out, "step time: {:.6} s", step.total_seconds);
    for (p, t) in step.pipeline_makespans.iter().enumerate() {
        let _ = writeln!(out, "  pipeline {p}: {t:.6} s");
    }
    let _ = writeln!(
        out,
        "sync: {} rounds, {:.6} s (serialized per layer: {:.6} s)",
        step.sync_rounds,
        step.sync_seconds,
        profile.num_layers as f64 * profile.allreduce_time_per_layer
    );
    let _ = writeln!(out, "memory (peak / limit bytes):");
    let mut over = Vec::new();
    for m in plan_memory(&plan, &profile) {
        let flag = if m.fits() { "" } else { "  EXCEEDS LIMIT" };
        let _ = writeln!(
            out,
            "  pipeline {} stage {}: {} layers, {} / {}{flag}",
            m.pipeline, m.stage, m.layers, m.peak_bytes, m.limit_bytes
        );
        if !m.fits() {
            over.push(m);
        }
    }
    let code = if over.is_empty() {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    };
    Ok((out, code))
}

pub fn cmd_validate(
    profile_path: &Path,
    plan: Option<&Path>,
    state: Option<&Path>,
    scenario: Option<&Path>,
) -> Result<(String, i32)> {
    let profile = Profile::load(profile_path)?;
    let mut out = String::from("profile: ok\n");
    let mut problems = 0;
    let mut report = |out: &mut String, what: &str, msgs: Vec<String>| {
        if msgs.is_empty() {
            let _ = writeln!(out, "{what}: ok");
        } else {
            problems += msgs.len();
            for m in msgs {
                let _ = writeln!(out, "{what}: {m}");
            }
        }
    };
    if let Some(p) = plan {
        let plan: ExecutionPlan = crate::domain::parse_json(&fs::read_to_string(p)?)?;
        let msgs = validate_plan_shape(&plan, profile.num_layers)
            .iter()
            .map(ToString::to_string)
            .collect();
        report(&mut out, "plan", msgs);
    }
    if let Some(p) = state {
        let state = ClusterState::load(p)?;
        let msgs = validate_state(&state, &profile)
            .iter()
            .map(ToString::to_string)
            .collect();
        report(&mut out, "state", msgs);
    }
    if let Some(p) = scenario {
        let sc: Scenario = crate::domain::parse_json(&fs::read_to_string(p)?)?;
        report(&mut out, "scenario", sc.check());
    }
    Ok((out, if problems == 0 { EXIT_OK } else { EXIT_INPUT }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SingleSummary {
    policy: SimPolicy,
    seeds: Vec<u64>,
    average_throughput: Vec<f64>,
    total_samples: Vec<f64>,
    faults: Vec<usize>,
}

pub fn cmd_simulate(
    profile_path: &Path,
    scenario_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    n_seeds: u64,
    policy: Option<SimPolicy>,
) -> Result<String> {
    let profile = Profile::load(profile_path)?;
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    if n_seeds == 0 {
        return Err(Error::InvalidInput("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds)
        .map(|i| scenario.seed.wrapping_add(i))
        .collect();
    fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::new("simulate", out_dir);
    manifest.input("profile", profile_path)?;
    manifest.input("scenario", scenario_path)?;
    manifest.seeds = seeds.clone();
    manifest.options = serde_json::json!({ "policy": policy });

    let mut text = String::new();
    let runs = match policy {
        Some(p) => {
            let sc = scenario.with_policy(p);
            let runs: Vec<_> = seeds
                .iter()
                .map(|&s| run_simulation(&sc.with_seed(s), &profile).map(|t| (s, p, t)))
                .collect::<Result<_>>()?;
            let summary = SingleSummary {
                policy: p,
                seeds: seeds.clone(),
                average_throughput: runs.iter().map(|r| r.2.average_throughput).collect(),
                total_samples: runs.iter().map(|r| r.2.total_samples).collect(),
                faults: runs.iter().map(|r| r.2.fault_count()).collect(),
            };
            write_json(&out_dir.join("summary.json"), &summary)?;
            for (s, t) in seeds.iter().zip(&summary.average_throughput) {
                let _ = writeln!(text, "{} seed {s}: {t:.6} samples/s", p.name());
            }
            runs
        }
        None => {
            let (cmp, records) = compare_policies(&scenario, &profile, &seeds)?;
            write_json(&out_dir.join("summary.json"), &cmp)?;
            text.push_str(&render_comparison(&cmp));
            records
                .into_iter()
                .map(|r| (r.seed, r.policy, r.trace))
                .collect()
        }
    };
    manifest.outputs.push("summary.json".into());
    for (s, p, trace) in &runs {
        let name = format!("trace_{}_seed{s}.csv", p.name());
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        write_atomic(&out_dir.join(&name), &buf)?;
        manifest.outputs.push(name);
    }
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(text)
}

pub fn render_comparison(c: &Comparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seeds: {:?}", c.seeds);
    let _ = writeln!(out, "{:<20} {:>16}", "policy", "mean samples/s");
    for p in &c.policies {
        let _ = writeln!(out, "{:<20} {:>16.6}", p.policy.name(), p.mean_throughput);
    }
    let _ = writeln!(
        out,
        "{:<36} {:>10} {:>10} {:>10}",
        "ratio", "min", "mean", "max"
    );
    for r in &c.ratios {
        let name = format!("{}/{}", r.numerator.name(), r.denominator.name());
        let _ = writeln!(
            out,
            "{name:<36} {:>10.6} {:>10.6} {:>10.6}",
            r.min, r.mean, r.max
        );
    }
    out
}
