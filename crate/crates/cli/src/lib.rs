//! Experiment runner: world generation, reference training, distillation,
//! evaluation and reporting. Every artifact lands in the output directory.

pub mod config;
mod table;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use thiserror::Error;
use voxhive::distill::{self, Episode, Performer, PreferenceDataset};
use voxhive::expert::generate_occupancy;
use voxhive::policy::{PolicyParams, SampleMode, TeacherConfig, TeacherMode};
use voxhive::seed;
use voxhive::tasks::corridor::{corridor_episode, distill_student, held_out_success, train_reference};
use voxhive::tasks::{run_episode, shared_expert, Controller, EpisodeConfig, EpisodeResult, TaskKind};
use voxhive::world::gen_world;

pub use config::RunConfig;
pub use table::{aggregate, read_results, Row, Summary};

pub const WORLD_FILE: &str = "world.txt";
pub const REFERENCE_FILE: &str = "reference.params";
pub const BC_CURVE_FILE: &str = "bc_curve.tsv";
pub const STUDENT_FILE: &str = "student.params";
pub const DATASET_FILE: &str = "dataset.tsv";
pub const ROUNDS_FILE: &str = "rounds.tsv";
pub const RESULTS_FILE: &str = "results.tsv";
pub const SUMMARY_FILE: &str = "summary.tsv";
pub const REPORT_FILE: &str = "report.tsv";
pub const OCCUPANCY_FILE: &str = "occupancy.txt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing artifact {0} (run the producing command first)")]
    MissingArtifact(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Table { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] voxhive::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::MissingArtifact(_) => "MissingArtifact",
            CliError::Io { .. } => "IoError",
            CliError::Table { .. } => "ParseError",
            CliError::Core(e) => e.kind(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Single-line `error: <kind>: <message>` diagnostic.
    pub fn diagnostic(&self) -> String {
        format!("error: {}: {}", self.kind(), self.to_string().replace('\n', " "))
    }
}

macro_rules! core_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}
core_from!(
    voxhive::world::WorldError,
    voxhive::policy::PolicyError,
    voxhive::distill::DistillError,
    voxhive::expert::ExpertError,
    voxhive::tasks::TaskError
);

#[derive(Debug, Parser)]
#[command(name = "voxhive", version, about = "Voxel multi-agent experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed; overrides `seeds.master`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker cap for episode evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a world snapshot.
    GenWorld,
    /// Behavior-clone the reference policy on training corridors.
    TrainRef,
    /// Distill the teacher into a student starting from the reference.
    Distill,
    /// Run the task suite for every configured method.
    Eval,
    /// Aggregate the results table into per-method headline metrics.
    Report,
    /// Generate a building occupancy from a description.
    GenOccupancy {
        /// Description tokens; `teacher.query` when omitted.
        query: Vec<String>,
    },
}

/// Evaluated pipeline behind a method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Scripted teacher with the extra expert (`teacher`, `teacher-only`).
    Teacher,
    /// Scripted teacher without the extra expert (`wo-ee`).
    TeacherWithoutExpert,
    /// Rule-based teacher (`rule-based`).
    RuleBased,
    /// Behavior-cloned reference (`reference`, `wo-kd`).
    Reference,
    /// Distilled student (`distilled`, `full`).
    Distilled,
}

impl Method {
    pub fn from_tag(tag: &str) -> Result<Method, CliError> {
        Ok(match tag {
            "teacher" | "teacher-only" => Method::Teacher,
            "wo-ee" => Method::TeacherWithoutExpert,
            "rule-based" => Method::RuleBased,
            "reference" | "wo-kd" => Method::Reference,
            "distilled" | "full" => Method::Distilled,
            _ => return Err(CliError::Config(format!("tasks.methods: unknown method tag `{tag}`"))),
        })
    }
}

/// A benchmark task or the held-out corridor suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskChoice {
    Corridor,
    Task(TaskKind),
}

impl TaskChoice {
    pub fn from_name(name: &str) -> Result<TaskChoice, CliError> {
        if name == "corridor" {
            return Ok(TaskChoice::Corridor);
        }
        TaskKind::from_name(name)
            .map(TaskChoice::Task)
            .ok_or_else(|| CliError::Config(format!("tasks.names: unknown task `{name}`")))
    }
}

/// Resolved invocation: configuration plus output directory and worker cap.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    pub jobs: Option<usize>,
}

impl Run {
    pub fn from_cli(cli: &Cli) -> Result<Run, CliError> {
        let mut config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            config.seeds.master = s;
        }
        if cli.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        Ok(Run { config, out: cli.out.clone(), jobs: cli.jobs })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn write(&self, file: &str, text: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let p = self.path(file);
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        info!("wrote {}", p.display());
        Ok(p)
    }

    fn read_artifact(&self, file: &str) -> Result<String, CliError> {
        let p = self.path(file);
        if !p.exists() {
            return Err(CliError::MissingArtifact(p));
        }
        std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
    }

    fn load_params(&self, file: &str) -> Result<PolicyParams, CliError> {
        Ok(PolicyParams::parse(&self.read_artifact(file)?)?)
    }

    fn master(&self) -> u64 {
        self.config.seeds.master
    }

    pub fn execute(&self, command: &Command) -> Result<(), CliError> {
        match command {
            Command::GenWorld => self.gen_world(),
            Command::TrainRef => self.train_ref(),
            Command::Distill => self.distill(),
            Command::Eval => self.eval(),
            Command::Report => self.report(),
            Command::GenOccupancy { query } => self.gen_occupancy(query),
        }
    }

    pub fn gen_world(&self) -> Result<(), CliError> {
        let mut wc = self.config.world.clone();
        wc.agents = self.config.agents.counts.iter().copied().max().unwrap_or(1);
        let w = gen_world(seed::derive(self.master(), "world"), &wc)?;
        self.write(WORLD_FILE, &w.to_snapshot())?;
        Ok(())
    }

    pub fn train_ref(&self) -> Result<(), CliError> {
        let fit = train_reference(&self.config.corridor()?, &self.config.distill)?;
        let mut curve = String::from("epoch\tloss\n");
        for (i, l) in fit.curve.iter().enumerate() {
            curve.push_str(&format!("{}\t{l:.12e}\n", i + 1));
        }
        if let (Some(first), Some(last)) = (fit.curve.first(), fit.curve.last()) {
            info!("bc loss {first:.6} -> {last:.6} over {} epochs", fit.curve.len());
        }
        self.write(REFERENCE_FILE, &fit.params.to_text())?;
        self.write(BC_CURVE_FILE, &curve)?;
        Ok(())
    }

    pub fn distill(&self) -> Result<(), CliError> {
        let reference = self.load_params(REFERENCE_FILE)?;
        let cc = self.config.corridor()?;
        let out = distill_student(&cc, &reference, &self.config.distill, seed::derive(self.master(), "distill"))?;
        let mut rounds =
            String::from("round\tstates\tsupervised\tpairs_added\tdataset_size\tagreement\tmean_loss\n");
        for r in &out.rounds {
            rounds.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\n",
                r.round, r.states, r.supervised, r.pairs_added, r.dataset_size, r.agreement, r.mean_loss
            ));
        }
        info!(
            "held-out corridor success: reference {:.3}, student {:.3}",
            held_out_success(&cc, &reference)?,
            held_out_success(&cc, &out.params)?
        );
        self.write(STUDENT_FILE, &out.params.to_text())?;
        self.write(DATASET_FILE, &out.dataset.to_text())?;
        self.write(ROUNDS_FILE, &rounds)?;
        Ok(())
    }

    /// Every (method, task, agents, seed) row in configuration order.
    pub fn eval_rows(&self) -> Result<Vec<Row>, CliError> {
        let cfg = &self.config;
        let methods: Vec<(String, Method)> =
            cfg.tasks.methods.iter().map(|t| Ok((t.clone(), Method::from_tag(t)?))).collect::<Result<_, CliError>>()?;
        let tasks: Vec<(String, TaskChoice)> =
            cfg.tasks.names.iter().map(|n| Ok((n.clone(), TaskChoice::from_name(n)?))).collect::<Result<_, CliError>>()?;
        let needs = |m: Method| methods.iter().any(|(_, x)| *x == m);
        let reference = if needs(Method::Reference) { Some(self.load_params(REFERENCE_FILE)?) } else { None };
        let student = if needs(Method::Distilled) { Some(self.load_params(STUDENT_FILE)?) } else { None };
        shared_expert()?;

        let mut jobs = Vec::new();
        for (tag, m) in &methods {
            for (name, t) in &tasks {
                let counts: &[usize] = if *t == TaskChoice::Corridor { &[1] } else { &cfg.agents.counts };
                for &agents in counts {
                    for s in 0..cfg.seeds.eval {
                        jobs.push((tag.as_str(), *m, name.as_str(), *t, agents, s));
                    }
                }
            }
        }
        let run_one = |&(tag, m, name, t, agents, s): &(&str, Method, &str, TaskChoice, usize, u64)| {
            let params = match m {
                Method::Reference => reference.as_ref(),
                Method::Distilled => student.as_ref(),
                _ => None,
            };
            let result = match t {
                TaskChoice::Corridor => self.corridor_row(m, params, s)?,
                TaskChoice::Task(kind) => {
                    let mut ec = EpisodeConfig::new(kind, seed::derive_index(self.master(), s), agents);
                    ec.world = cfg.world.clone();
                    ec.groups = cfg.agents.groups;
                    ec.ticks_per_iteration = cfg.agents.ticks_per_iteration;
                    if let Some(cap) = cfg.tasks.cap {
                        ec.cap = cap.min(kind.max_iterations());
                    }
                    let controller = match (m, params) {
                        (Method::Teacher, _) => Controller::Teacher { expert: true },
                        (Method::TeacherWithoutExpert, _) => Controller::Teacher { expert: false },
                        (Method::RuleBased, _) => Controller::RuleBased,
                        (_, Some(p)) => Controller::Student(p),
                        (_, None) => unreachable!("student params loaded above"),
                    };
                    run_episode(&ec, controller)?
                }
            };
            Ok::<Row, CliError>(Row { method: tag.into(), task: name.into(), agents, seed: s, result })
        };
        let rows: Vec<Result<Row, CliError>> = match self.jobs {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("--jobs: {e}")))?
                .install(|| jobs.par_iter().map(run_one).collect()),
            None => jobs.par_iter().map(run_one).collect(),
        };
        rows.into_iter().collect()
    }

    fn corridor_row(&self, m: Method, params: Option<&PolicyParams>, s: u64) -> Result<EpisodeResult, CliError> {
        let held_out = self.config.seeds.held_out_base + s;
        let mut ep: Episode = corridor_episode(held_out)?;
        let performer = match (m, params) {
            (Method::Teacher, _) => Performer::Teacher(TeacherConfig::scripted_expert()),
            (Method::TeacherWithoutExpert, _) => {
                Performer::Teacher(TeacherConfig { mode: TeacherMode::Scripted, expert: false })
            }
            (Method::RuleBased, _) => Performer::Teacher(TeacherConfig::rule_based()),
            (_, Some(p)) => Performer::Student(p, SampleMode::Greedy),
            (_, None) => unreachable!("student params loaded above"),
        };
        let mut rng = seed::rng(seed::derive_index(self.master(), s));
        let (success, steps) = distill::run_episode(&mut ep, performer, &mut rng)?;
        Ok(EpisodeResult {
            iterations_used: steps,
            success,
            blocks_found: 0,
            area: 0,
            completion: f64::from(u8::from(success)),
            iou: 0.0,
            code_fid: 0.0,
            unsatisfiable: false,
        })
    }

    pub fn eval(&self) -> Result<(), CliError> {
        let text = table::results_text(&self.eval_rows()?);
        // Aggregate what was written, so the summary matches the table exactly.
        let rows = read_results(&text).map_err(|msg| CliError::Table { path: self.path(RESULTS_FILE), msg })?;
        let summary = aggregate(&rows);
        self.write(RESULTS_FILE, &text)?;
        self.write(SUMMARY_FILE, &table::summary_text(&summary))?;
        Ok(())
    }

    pub fn report(&self) -> Result<(), CliError> {
        let text = self.read_artifact(RESULTS_FILE)?;
        let rows = read_results(&text).map_err(|msg| CliError::Table { path: self.path(RESULTS_FILE), msg })?;
        let report = table::report_text(&aggregate(&rows));
        self.write(REPORT_FILE, &report)?;
        print!("{report}");
        Ok(())
    }

    pub fn gen_occupancy(&self, query: &[String]) -> Result<(), CliError> {
        let tokens: Vec<String> = if query.is_empty() {
            self.config.teacher.query.split_whitespace().map(String::from).collect()
        } else {
            query.to_vec()
        };
        let expert = shared_expert()?;
        let mut rng = seed::rng_for(self.master(), "gen-occupancy");
        let occ =
            generate_occupancy(&tokens, &expert.library, &expert.codebook, self.config.teacher.mutation_rate, &mut rng)?;
        self.write(OCCUPANCY_FILE, &occ.to_text())?;
        Ok(())
    }
}

/// Resolve the invocation and run its command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    Run::from_cli(cli)?.execute(&cli.command)
}

/// Load a preference dataset written by `distill`.
pub fn read_dataset(path: &Path) -> Result<PreferenceDataset, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(PreferenceDataset::parse(&text)?)
}
