use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use riskpomdp::evaluation::{sample_models, select_policy, Candidate, SelectionConfig, DEFAULT_GAMMAS};
use riskpomdp::fixture;
use riskpomdp::frg;
use riskpomdp::hmm::EmConfig;
use riskpomdp::io::{self, ArtifactHeader};
use riskpomdp::observation::{dirichlet_posterior, label_steps, split_by_quartiles, TrajectoryBatch};
use riskpomdp::pipeline::{self, GenConfig, PipelineConfig};
use riskpomdp::rng::derive_seed;
use riskpomdp::runtime::{self, ControllerState};
use riskpomdp::solver::{solve_sweep, AlphaVectorPolicy, PerseusConfig};
use riskpomdp::DiscretePomdp;

#[derive(Parser, Debug)]
#[command(
    name = "riskpomdp",
    version,
    about = "Learn, solve and select risk-sensitive POMDP policies from mission logs"
)]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to one per core. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the built-in model and its confusion counts.
    Fixture {
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        opts: ModelOpts,
    },
    /// Sample a synthetic trajectory batch from a model.
    GenBatch {
        #[arg(long)]
        out: PathBuf,
        /// Model to sample from; the built-in model by default.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        opts: GenOpts,
    },
    /// Split the missions of a batch by score quartile.
    Split {
        batch: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the performance classifiers and write held-out confusion counts.
    Train {
        batch: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Learn the model from a batch.
    BuildModel {
        batch: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        opts: ModelOpts,
        #[arg(long, default_value_t = 1.0)]
        alpha0: f64,
    },
    /// Solve a model for one or more discount factors.
    Solve {
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        gamma: Vec<f64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        solver: SolverOpts,
    },
    /// Select a discount factor by value-at-risk over posterior models.
    Select {
        /// Learn everything from this batch.
        #[arg(long, conflicts_with_all = ["model", "confusion"])]
        batch: Option<PathBuf>,
        /// Use this model and sample only observation functions.
        #[arg(long, requires = "confusion")]
        model: Option<PathBuf>,
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        eval: EvalOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        solver: SolverOpts,
        /// Also write the raw returns of every candidate.
        #[arg(long)]
        dump_returns: bool,
    },
    /// Report return statistics of policies and the built-in baselines.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        /// Sample observation functions from these counts; otherwise
        /// evaluate on the model alone.
        #[arg(long)]
        confusion: Option<PathBuf>,
        #[arg(long)]
        policy: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        eval: EvalOpts,
        #[arg(long)]
        dump_returns: bool,
    },
    /// Read observation labels on stdin, write actions on stdout.
    Control {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Write the belief trace here when the input ends.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the threshold table of the policy and exit.
        #[arg(long)]
        thresholds: bool,
    },
    /// Convert a model to another format.
    Export {
        model: PathBuf,
        #[arg(long, value_parser = ["cassandra"])]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct ModelOpts {
    /// Discount stored on the model.
    #[arg(long = "model-gamma", default_value_t = fixture::DEFAULT_DISCOUNT)]
    gamma: f64,
    #[arg(long, default_value_t = fixture::DEFAULT_HORIZON)]
    horizon: usize,
}

#[derive(Args, Debug, Clone)]
struct GenOpts {
    #[arg(long, default_value_t = 400)]
    missions: usize,
    #[arg(long, default_value_t = 20)]
    participants: usize,
    #[arg(long, default_value_t = 4)]
    features: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Train a single configuration `trees,depth,leaf` (depth `none` for
    /// unbounded) instead of searching the default grid.
    #[arg(long)]
    grid_point: Option<String>,
    #[arg(long, default_value_t = 500)]
    em_max_iter: usize,
    #[arg(long, default_value_t = 5)]
    em_restarts: usize,
}

#[derive(Args, Debug, Clone)]
struct SolverOpts {
    #[arg(long, default_value_t = 500)]
    belief_count: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
}

#[derive(Args, Debug, Clone)]
struct EvalOpts {
    /// Candidate discount factors.
    #[arg(long, num_args = 1.., default_values_t = DEFAULT_GAMMAS.to_vec())]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    n_models: usize,
    #[arg(long, default_value_t = 200)]
    n_episodes: usize,
    #[arg(long, default_value_t = 0.5)]
    quantile: f64,
    #[arg(long, default_value_t = fixture::DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha0: f64,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_model(path: &Path) -> Result<DiscretePomdp> {
    Ok(io::parse_model(&read(path)?, path)?)
}

fn load_batch(path: &Path) -> Result<TrajectoryBatch> {
    Ok(io::parse_batch(&read(path)?, &frg::action_labels(), path)?)
}

/// Hash input: the settings plus the content of every input file, so output
/// locations and thread counts do not change the header.
fn header(seed: u64, settings: &str, inputs: &[&Path]) -> Result<ArtifactHeader> {
    let mut canonical = settings.to_string();
    for p in inputs {
        canonical.push('\n');
        canonical.push_str(&io::sha256_hex(&read(p)?));
    }
    Ok(ArtifactHeader::new(seed, &canonical))
}

fn policy_file_name(gamma: f64) -> String {
    format!("policy-gamma-{gamma}.txt")
}

fn train_config(seed: u64, opts: &TrainOpts) -> Result<PipelineConfig> {
    let mut c = PipelineConfig::with_seed(seed);
    c.train.folds = opts.folds;
    if let Some(spec) = &opts.grid_point {
        let parts: Vec<&str> = spec.split(',').collect();
        if parts.len() != 3 {
            bail!("--grid-point expects `trees,depth,leaf`");
        }
        c.train.grid = vec![riskpomdp::classifier::GridPoint {
            n_trees: parts[0].parse().context("tree count")?,
            max_depth: if parts[1] == "none" {
                None
            } else {
                Some(parts[1].parse().context("depth")?)
            },
            min_samples_leaf: parts[2].parse().context("leaf size")?,
        }];
    }
    c.em.max_iter = opts.em_max_iter;
    c.em.init = riskpomdp::hmm::EmInit::Random {
        restarts: opts.em_restarts,
    };
    Ok(c)
}

fn perseus(seed: u64, opts: &SolverOpts) -> PerseusConfig {
    PerseusConfig {
        belief_count: opts.belief_count,
        max_iter: opts.max_iter,
        epsilon: opts.epsilon,
        seed: derive_seed(seed, &[3]),
    }
}

fn selection(seed: u64, opts: &EvalOpts) -> SelectionConfig {
    SelectionConfig {
        gammas: opts.gamma.clone(),
        n_models: opts.n_models,
        n_episodes: opts.n_episodes,
        quantile: opts.quantile,
        horizon: opts.horizon,
        seed: derive_seed(seed, &[4]),
    }
}

fn write_policies(dir: &Path, policies: &[AlphaVectorPolicy], h: &ArtifactHeader) -> Result<()> {
    for p in policies {
        if !p.meta.converged {
            log::warn!(
                "gamma {} stopped after {} iterations (residual {:.2e})",
                p.discount,
                p.meta.iterations,
                p.meta.residual
            );
        }
        write(
            &dir.join(policy_file_name(p.discount)),
            &io::serialize_policy(p, &frg::action_labels(), Some(h)),
        )?;
    }
    Ok(())
}

fn write_report(
    dir: &Path,
    reports: &[riskpomdp::evaluation::PolicyReport],
    samples: Option<&[riskpomdp::evaluation::ReturnSample]>,
    h: &ArtifactHeader,
) -> Result<()> {
    write(&dir.join("report.txt"), &io::format_report(reports, Some(h)))?;
    write(&dir.join("report.tsv"), &io::serialize_report_table(reports, Some(h)))?;
    if let Some(samples) = samples {
        for (r, s) in reports.iter().zip(samples) {
            let name = r.name.replace([' ', '='], "-");
            write(
                &dir.join(format!("returns-{name}.txt")),
                &io::format_values(&s.returns, Some(h)),
            )?;
        }
    }
    print!("{}", io::format_report(reports, None));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Fixture { out_dir, opts } => {
            let h = header(seed, &format!("fixture {opts:?}"), &[])?;
            let (model, _) = fixture::build_frg_fixture(opts.gamma, opts.horizon);
            write(&out_dir.join("model.txt"), &io::serialize_model(&model, Some(&h)))?;
            write(
                &out_dir.join("confusion.txt"),
                &io::serialize_confusion(&fixture::confusion_counts(), Some(&h)),
            )?;
        }
        Command::GenBatch { out, model, opts } => {
            let inputs: Vec<&Path> = model.iter().map(PathBuf::as_path).collect();
            let h = header(seed, &format!("gen-batch {opts:?}"), &inputs)?;
            let model = match &model {
                Some(p) => load_model(p)?,
                None => fixture::frg_fixture(),
            };
            let config = GenConfig {
                missions: opts.missions,
                participants: opts.participants,
                features: opts.features,
                noise: opts.noise,
                max_len: model.horizon,
                seed,
            };
            let batch = pipeline::gen_batch(&model, &config)?;
            write(&out, &io::serialize_batch(&batch, &model.actions, Some(&h)))?;
        }
        Command::Split { batch: path, out } => {
            let h = header(seed, "split", &[&path])?;
            let batch = load_batch(&path)?;
            let split = split_by_quartiles(&batch)?;
            let ids = |group: &[usize]| {
                group
                    .iter()
                    .map(|&m| batch.missions[m].mission_id.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let text = format!(
                "{}\nq1 {}\nq3 {}\nlow {}\nmid {}\nhigh {}\n",
                h.line(),
                split.q1,
                split.q3,
                ids(&split.low),
                ids(&split.mid),
                ids(&split.high)
            );
            write(&out, &text)?;
            println!(
                "low {}  mid {}  high {}",
                split.low.len(),
                split.mid.len(),
                split.high.len()
            );
        }
        Command::Train { batch: path, out, opts } => {
            let h = header(seed, &format!("train {opts:?}"), &[&path])?;
            let batch = load_batch(&path)?;
            let config = train_config(seed, &opts)?;
            let split = split_by_quartiles(&batch)?;
            let labeled = label_steps(&batch, &split);
            let trained = riskpomdp::classifier::train_classifiers(&batch, &labeled, &config.train)?;
            let counts = riskpomdp::classifier::confusion_counts(&trained.classifier, &batch, &trained.heldout)?;
            for s in &trained.selection {
                let best = s
                    .scores
                    .iter()
                    .find(|g| g.point == s.chosen)
                    .expect("chosen point was scored");
                println!(
                    "{}: {:?} balanced accuracy {:.3} on {} steps",
                    s.config, s.chosen, best.mean_balanced_accuracy, s.training_steps
                );
            }
            write(&out, &io::serialize_confusion(&counts, Some(&h)))?;
        }
        Command::BuildModel {
            batch: path,
            out_dir,
            train,
            opts,
            alpha0,
        } => {
            let h = header(seed, &format!("build-model {train:?} {opts:?} {alpha0}"), &[&path])?;
            let batch = load_batch(&path)?;
            let mut config = train_config(seed, &train)?;
            config.discount = opts.gamma;
            config.horizon = opts.horizon;
            config.alpha0 = alpha0;
            let learned = pipeline::learn_model(&batch, &config)?;
            write(
                &out_dir.join("model.txt"),
                &io::serialize_model(&learned.model, Some(&h)),
            )?;
            write(
                &out_dir.join("confusion.txt"),
                &io::serialize_confusion(&learned.counts, Some(&h)),
            )?;
            write(
                &out_dir.join("em-loglik.txt"),
                &io::format_values(&learned.em.loglik_trace, Some(&h)),
            )?;
            for s in &learned.rewards.unvisited {
                log::warn!("state {} never observed; its reward is 0", learned.model.states[*s]);
            }
        }
        Command::Solve {
            model: path,
            gamma,
            out_dir,
            solver,
        } => {
            let h = header(seed, &format!("solve {gamma:?} {solver:?}"), &[&path])?;
            let model = load_model(&path)?;
            let policies = solve_sweep(&model, &gamma, &perseus(seed, &solver))?;
            write_policies(&out_dir, &policies, &h)?;
            for p in &policies {
                if let Ok(table) = runtime::extract_thresholds(&model, p, 1000) {
                    println!("gamma {}:\n{}", p.discount, runtime::format_thresholds(&model, &table));
                }
            }
        }
        Command::Select {
            batch,
            model,
            confusion,
            out_dir,
            eval,
            train,
            solver,
            dump_returns,
        } => {
            let settings = format!("select {eval:?} {train:?} {solver:?}");
            let result = if let Some(path) = batch {
                let h = header(seed, &settings, &[&path])?;
                let batch = load_batch(&path)?;
                let mut config = train_config(seed, &train)?;
                config.alpha0 = eval.alpha0;
                config.horizon = eval.horizon;
                config.perseus = perseus(seed, &solver);
                config.selection = selection(seed, &eval);
                pipeline::run_pipeline(&batch, &config).map(|out| {
                    (
                        h,
                        Some(out.learned.model),
                        out.policies,
                        out.selection,
                        out.sampled.dropped.len(),
                    )
                })
            } else if let (Some(mp), Some(cp)) = (model, confusion) {
                let h = header(seed, &settings, &[&mp, &cp])?;
                let model = load_model(&mp)?;
                let counts = io::parse_confusion(&read(&cp)?, &cp)?;
                let posterior = dirichlet_posterior(&counts, eval.alpha0);
                let config = selection(seed, &eval);
                (|| {
                    let policies = solve_sweep(&model, &config.gammas, &perseus(seed, &solver))?;
                    let sampled = sample_models(
                        &model,
                        &posterior,
                        None,
                        config.n_models,
                        config.seed,
                        &EmConfig::default(),
                    )?;
                    let candidates: Vec<Candidate> = policies.iter().cloned().map(Candidate::pomdp).collect();
                    let sel = select_policy(&candidates, &sampled.models, &model, &config)?;
                    Ok((h, None, policies, sel, 0))
                })()
            } else {
                bail!("select needs --batch, or --model with --confusion");
            };
            match result {
                Ok((h, learned, policies, sel, dropped)) => {
                    if let Some(m) = learned {
                        write(&out_dir.join("model.txt"), &io::serialize_model(&m, Some(&h)))?;
                    }
                    write_policies(&out_dir, &policies, &h)?;
                    write_report(&out_dir, &sel.reports, dump_returns.then_some(&sel.samples[..]), &h)?;
                    let chosen = &sel.reports[sel.selected];
                    write(
                        &out_dir.join("selected.txt"),
                        &format!(
                            "{}\n{}\ndropped_models {dropped}\n",
                            h.line(),
                            policy_file_name(chosen.gamma.unwrap_or(0.0))
                        ),
                    )?;
                    println!("selected {}", chosen.name);
                }
                Err(e) => {
                    write(&out_dir.join("INCOMPLETE"), &format!("{e}\n"))?;
                    return Err(e.into());
                }
            }
        }
        Command::Simulate {
            model: mp,
            confusion,
            policy,
            out_dir,
            eval,
            dump_returns,
        } => {
            let mut inputs: Vec<&Path> = vec![&mp];
            inputs.extend(confusion.iter().map(PathBuf::as_path));
            inputs.extend(policy.iter().map(PathBuf::as_path));
            let h = header(seed, &format!("simulate {eval:?}"), &inputs)?;
            let model = load_model(&mp)?;
            let config = selection(seed, &eval);
            let candidates = policy
                .iter()
                .map(|p| Ok(Candidate::pomdp(io::parse_policy(&read(p)?, &model.actions, p)?)))
                .collect::<Result<Vec<_>>>()?;
            let models = match &confusion {
                Some(cp) => {
                    let counts = io::parse_confusion(&read(cp)?, cp)?;
                    let posterior = dirichlet_posterior(&counts, eval.alpha0);
                    sample_models(
                        &model,
                        &posterior,
                        None,
                        config.n_models,
                        config.seed,
                        &EmConfig::default(),
                    )?
                    .models
                }
                None => vec![model.clone()],
            };
            let (reports, samples) = pipeline::simulate_report(&candidates, &models, &model, &config)?;
            write_report(&out_dir, &reports, dump_returns.then_some(&samples[..]), &h)?;
        }
        Command::Control {
            model,
            policy,
            trace,
            thresholds,
        } => {
            let model = load_model(&model)?;
            let policy = io::parse_policy(&read(&policy)?, &model.actions, &policy)?;
            if thresholds {
                let table = runtime::extract_thresholds(&model, &policy, 1000)?;
                print!("{}", runtime::format_thresholds(&model, &table));
                return Ok(());
            }
            let mut state = ControllerState::new(model, policy)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            writeln!(out, "{}", state.model().actions[state.action()])?;
            out.flush()?;
            for line in std::io::stdin().lock().lines() {
                let line = line?;
                let label = line.trim();
                if label.is_empty() {
                    continue;
                }
                let obs = state
                    .model()
                    .observation_index(label)
                    .with_context(|| format!("unknown observation `{label}`"))?;
                let (action, _) = state.step(obs)?;
                if state.is_terminated() {
                    break;
                }
                writeln!(out, "{}", state.model().actions[action])?;
                out.flush()?;
            }
            if let Some(path) = trace {
                let h = ArtifactHeader::new(seed, "control");
                write(
                    &path,
                    &format!("{}\n{}", h.line(), runtime::format_trace(state.model(), state.trace())),
                )?;
            }
        }
        Command::Export { model, format, out } => {
            let text = match format.as_str() {
                "cassandra" => io::export_cassandra(&load_model(&model)?),
                other => bail!("unknown format `{other}`"),
            };
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .expect("thread pool is configured once");
    }
    #[cfg(not(feature = "parallel"))]
    let _ = cli.jobs;
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
