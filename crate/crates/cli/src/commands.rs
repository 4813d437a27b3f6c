//! Command implementations and the artifact layout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mpgne::dataset::{build_dataset, parameter_dataset, Dataset, Split};
use mpgne::evaluate::bench::{generate_datasets, run_with_data, solve_optima, Experiment};
use mpgne::evaluate::{evaluate, reports_to_csv_with, reports_to_table, EvalReport};
use mpgne::games::{build_builtin, random_lq_gnep, random_mpqcqp, random_mpqp, BuiltinId, ParametricGame, StructureTag};
use mpgne::learn::{logs_to_csv, train_gne, train_single_agent, train_value_models, GneModel, NiLoss, NiTrainConfig, PredictMode, RestartLog, ValueModelSet, ValueRegularization};
use mpgne::linalg::Mat;
use mpgne::nn::{Activation, MlpArchitecture};
use mpgne::optimize::{AdamConfig, LbfgsConfig, OptimizerConfig};
use mpgne::textfmt::{fmt_f64, write_atomic};

use crate::config::RunConfig;
use crate::manifest::{sha256_hex, Manifest};
use crate::CliError;

const GAME_KEYS: &[&str] = &["game", "n_agents", "game_seed"];
const DATA_KEYS: &[&str] = &["m_train", "m_val", "m_test", "data_seed"];
const OPT_KEYS: &[&str] = &["restarts", "base_seed", "adam_epochs", "adam_lr", "lbfgs_iters", "lbfgs_memory"];
const VALUE_KEYS: &[&str] = &["value_hidden", "value_activation", "value_bypass", "value_l2", "value_l1"];
const GNE_KEYS: &[&str] = &[
    "gne_hidden",
    "gne_activation",
    "gne_bypass",
    "loss",
    "epsilon",
    "beta",
    "gamma",
    "l2",
    "l1",
    "penalize_box",
    "per_sample_penalty",
    "saturate",
    "normalize_input",
];

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

/// Short content hash of the keys (and extra text) that determine an artifact.
fn tag(cfg: &RunConfig, groups: &[&[&'static str]], extra: &str) -> Result<String, CliError> {
    let mut text = cfg.canonical(&keys(groups));
    if let Some(path) = cfg.str("game").strip_prefix("file:") {
        let _ = writeln!(text, "game_file_sha256={}", crate::manifest::file_hash(Path::new(path))?);
    }
    text.push_str(extra);
    Ok(sha256_hex(text.as_bytes())[..12].to_string())
}

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn new(cfg: &RunConfig) -> Self {
        Layout {
            root: PathBuf::from(cfg.str("out_dir")),
        }
    }

    fn game(&self, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        Ok(self.root.join("game").join(format!("game_{}.txt", tag(cfg, &[GAME_KEYS], "")?)))
    }

    fn data(&self, cfg: &RunConfig, split: Split) -> Result<PathBuf, CliError> {
        Ok(self.root.join("data").join(format!("data_{}_{}.csv", tag(cfg, &[GAME_KEYS, DATA_KEYS], "")?, split.name())))
    }

    fn values(&self, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        Ok(self.root.join("models").join(format!("values_{}.txt", tag(cfg, &[GAME_KEYS, DATA_KEYS, OPT_KEYS, VALUE_KEYS], "")?)))
    }

    /// Solution model: NI-trained for games, single-agent otherwise.
    fn model(&self, cfg: &RunConfig, single: bool) -> Result<PathBuf, CliError> {
        Ok(if single {
            self.root.join("models").join(format!("mp_{}.txt", tag(cfg, &[GAME_KEYS, DATA_KEYS, OPT_KEYS, GNE_KEYS, &["warm_start"]], "")?))
        } else {
            self.root
                .join("models")
                .join(format!("gne_{}.txt", tag(cfg, &[GAME_KEYS, DATA_KEYS, OPT_KEYS, VALUE_KEYS, GNE_KEYS], "")?))
        })
    }

    fn report(&self, cfg: &RunConfig, single: bool) -> Result<PathBuf, CliError> {
        let model = self.model(cfg, single)?;
        let stem = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        Ok(self.root.join("reports").join(format!("eval_{stem}_{}.csv", cfg.str("mode"))))
    }
}

/// Sibling path with `suffix` replacing the extension.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(CliError::from)
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{} not found; run `{hint}` with the same config first", path.display())))
    }
}

fn build_game(cfg: &RunConfig) -> Result<ParametricGame, CliError> {
    let n = cfg.usize("n_agents")?;
    let n_agents = (n > 0).then_some(n);
    let seed = cfg.u64("game_seed")?;
    let spec = cfg.str("game");
    Ok(match spec {
        "random_lq" => {
            let n = n_agents.unwrap_or(2);
            random_lq_gnep(seed, n, 2, 2, 20 * n)
        }
        "mpqp" => random_mpqp(seed, 10, 6, 50),
        "mpqcqp" => random_mpqcqp(seed, 10, 6, 50, 20),
        s => match s.strip_prefix("file:") {
            Some(path) => ParametricGame::load(Path::new(path))?,
            None => build_builtin(BuiltinId::parse(s)?, n_agents)?,
        },
    })
}

fn is_single_agent(game: &ParametricGame) -> bool {
    game.n_agents() == 1 || game.tag == StructureTag::SingleAgent
}

fn optimizer(cfg: &RunConfig) -> Result<OptimizerConfig, CliError> {
    let opt = OptimizerConfig {
        adam: AdamConfig {
            learning_rate: cfg.f64("adam_lr")?,
            epochs: cfg.usize("adam_epochs")?,
            ..AdamConfig::default()
        },
        lbfgs: LbfgsConfig {
            max_iters: cfg.usize("lbfgs_iters")?,
            memory: cfg.usize("lbfgs_memory")?,
            ..LbfgsConfig::default()
        },
        restarts: cfg.usize("restarts")?,
        base_seed: cfg.u64("base_seed")?,
    };
    opt.validate()?;
    Ok(opt)
}

fn train_config(cfg: &RunConfig) -> Result<NiTrainConfig, CliError> {
    let c = NiTrainConfig {
        loss: NiLoss::parse(cfg.str("loss"))?,
        epsilon: cfg.f64("epsilon")?,
        beta: cfg.f64("beta")?,
        gamma: cfg.f64("gamma")?,
        l2: cfg.f64("l2")?,
        l1: cfg.f64("l1")?,
        optimizer: optimizer(cfg)?,
        penalize_box: cfg.bool("penalize_box")?,
        per_sample_penalty: cfg.bool("per_sample_penalty")?,
        saturate: cfg.bool("saturate")?,
        normalize_input: cfg.bool("normalize_input")?,
    };
    c.validate()?;
    Ok(c)
}

fn arch(cfg: &RunConfig, prefix: &str, input: usize, output: usize) -> Result<MlpArchitecture, CliError> {
    let act = Activation::parse(cfg.str(&format!("{prefix}_activation")))?;
    Ok(MlpArchitecture::new(input, &cfg.sizes(&format!("{prefix}_hidden"))?, output, act, cfg.bool(&format!("{prefix}_bypass"))?)?)
}

fn mode(cfg: &RunConfig) -> Result<PredictMode, CliError> {
    Ok(PredictMode::parse(cfg.str("mode"))?)
}

fn load_split(layout: &Layout, cfg: &RunConfig, split: Split, m: &mut Manifest) -> Result<Dataset, CliError> {
    let path = layout.data(cfg, split)?;
    require(&path, "mpgne gen-data")?;
    m.input(&path)?;
    Ok(Dataset::load(&path)?)
}

fn value_log(logs: &[Vec<RestartLog>]) -> String {
    let mut s = String::from("agent,");
    s.push_str(logs_to_csv(&[]).trim_end());
    s.push('\n');
    for (i, agent) in logs.iter().enumerate() {
        for line in logs_to_csv(agent).lines().skip(1) {
            let _ = writeln!(s, "{i},{line}");
        }
    }
    s
}

/// Runs a command and returns its manifest (already written).
pub fn dispatch(command: &str, positional: &[String], cfg: &RunConfig) -> Result<Manifest, CliError> {
    let workers = cfg.usize("workers")?;
    if workers > 0 {
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    if command != "bench" && !positional.is_empty() {
        return Err(CliError::Usage(format!("{command} takes no positional arguments, got {positional:?}")));
    }
    let layout = Layout::new(cfg);
    let mut m = Manifest::new(command, positional, cfg);
    let game = build_game(cfg)?;
    if let Some(path) = cfg.str("game").strip_prefix("file:") {
        m.input(Path::new(path))?;
    }
    let single = is_single_agent(&game);
    if matches!(command, "train-value" | "train-gne" | "train-mp" | "bench") {
        m.notes.push("restart selection uses the full validation objective: loss + penalty + regularization".into());
    }
    let primary = match command {
        "gen-game" => {
            let path = layout.game(cfg)?;
            game.save(&path)?;
            m.output(&path)?;
            path
        }
        "gen-data" => {
            let seed = cfg.u64("data_seed")?;
            let sizes = [(Split::Train, "m_train"), (Split::Val, "m_val"), (Split::Test, "m_test")];
            let mut first = None;
            for (split, key) in sizes {
                let n = cfg.usize(key)?;
                let d = if single && split != Split::Test {
                    parameter_dataset(&game, n, split, seed)?
                } else {
                    build_dataset(&game, n, split, seed)?
                };
                let path = layout.data(cfg, split)?;
                d.save(&path)?;
                m.output(&path)?;
                m.output(&mpgne::dataset::provenance_path(&path))?;
                first.get_or_insert(path);
            }
            first.expect("three splits")
        }
        "train-value" => {
            if single {
                return Err(CliError::Config("single-agent problems need no value models; use train-mp".into()));
            }
            let train = load_split(&layout, cfg, Split::Train, &mut m)?;
            let val = load_split(&layout, cfg, Split::Val, &mut m)?;
            let archs = (0..game.n_agents())
                .map(|i| arch(cfg, "value", game.n_x() - game.agent_dims[i] + game.n_p, 1))
                .collect::<Result<Vec<_>, _>>()?;
            let reg = ValueRegularization {
                l2: cfg.f64("value_l2")?,
                l1: cfg.f64("value_l1")?,
            };
            let vt = train_value_models(&game, &train, Some(&val), &archs, &vec![reg; game.n_agents()], &optimizer(cfg)?)?;
            let path = layout.values(cfg)?;
            vt.set.save(&path)?;
            m.output(&path)?;
            let log = sibling(&path, ".log.csv");
            write(&log, &value_log(&vt.logs))?;
            m.timing.push(log);
            path
        }
        "train-gne" => {
            if single {
                return Err(CliError::Config("single-agent problem; use train-mp".into()));
            }
            let train = load_split(&layout, cfg, Split::Train, &mut m)?;
            let val = load_split(&layout, cfg, Split::Val, &mut m)?;
            let vpath = layout.values(cfg)?;
            require(&vpath, "mpgne train-value")?;
            m.input(&vpath)?;
            let values = ValueModelSet::load(&vpath)?;
            let t = train_gne(&game, &train, &val, &values, &arch(cfg, "gne", game.n_p, game.n_x())?, &train_config(cfg)?)?;
            let path = layout.model(cfg, false)?;
            t.model.save(&path)?;
            m.output(&path)?;
            let log = sibling(&path, ".log.csv");
            write(&log, &logs_to_csv(&t.outcome.logs))?;
            m.timing.push(log);
            path
        }
        "train-mp" => {
            if !single {
                return Err(CliError::Config(format!("{} has {} coupled agents; use train-value and train-gne", game.name, game.n_agents())));
            }
            let train = load_split(&layout, cfg, Split::Train, &mut m)?;
            let val = load_split(&layout, cfg, Split::Val, &mut m)?;
            let optima = if cfg.bool("warm_start")? { Some(solve_optima(&game, &train.p)?) } else { None };
            let t = train_single_agent(&game, &train, &val, optima.as_ref(), &arch(cfg, "gne", game.n_p, game.n_x())?, &train_config(cfg)?)?;
            let path = layout.model(cfg, true)?;
            t.model.save(&path)?;
            m.output(&path)?;
            let log = sibling(&path, ".log.csv");
            write(&log, &logs_to_csv(&t.outcome.logs))?;
            m.timing.push(log);
            path
        }
        "eval" => {
            let test = load_split(&layout, cfg, Split::Test, &mut m)?;
            let mpath = layout.model(cfg, single)?;
            require(&mpath, if single { "mpgne train-mp" } else { "mpgne train-gne" })?;
            m.input(&mpath)?;
            let model = GneModel::load(&mpath)?;
            let label = mpath.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
            let report = evaluate(&game, &model, &test, mode(cfg)?, &game.name, &label)?;
            let path = layout.report(cfg, single)?;
            write_reports(&path, &[report], &mut m)?;
            path
        }
        "predict" => {
            let input = PathBuf::from(cfg.str("input"));
            if input.as_os_str().is_empty() {
                return Err(CliError::Config("predict needs --input <csv of parameter rows>".into()));
            }
            m.input(&input)?;
            let p = read_rows(&input, game.n_p)?;
            let mpath = layout.model(cfg, single)?;
            require(&mpath, if single { "mpgne train-mp" } else { "mpgne train-gne" })?;
            m.input(&mpath)?;
            let model = GneModel::load(&mpath)?;
            model.check_game(&game)?;
            let x = model.predict_batch(&game, &p, mode(cfg)?)?;
            let path = match cfg.str("output") {
                "" => {
                    let h = &sha256_hex(std::fs::read(&input).map_err(|e| CliError::Io(e.to_string()))?.as_slice())[..12];
                    let stem = mpath.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
                    layout.root.join("reports").join(format!("predict_{stem}_{}_{h}.csv", cfg.str("mode")))
                }
                s => PathBuf::from(s),
            };
            write(&path, &rows_csv(&x))?;
            m.output(&path)?;
            path
        }
        "bench" => bench(&layout, positional, cfg, &mut m)?,
        other => return Err(CliError::Usage(format!("unknown command {other:?}"))),
    };
    m.save(&sibling(&primary, ".manifest"))?;
    Ok(m)
}

fn write_reports(path: &Path, reports: &[EvalReport], m: &mut Manifest) -> Result<(), CliError> {
    write(path, &reports_to_csv_with(reports, false))?;
    m.output(path)?;
    let timed = sibling(path, ".timed.csv");
    write(&timed, &reports_to_csv_with(reports, true))?;
    let table = sibling(path, ".txt");
    write(&table, &reports_to_table(reports))?;
    m.timing.push(timed);
    m.timing.push(table);
    Ok(())
}

/// Parameter rows from a CSV file; a non-numeric first line is a header.
fn read_rows(path: &Path, width: usize) -> Result<Mat, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (n, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if v.len() != width {
                    return Err(CliError::Format(format!("{} row {}: expected {width} parameters, got {}", path.display(), n + 1, v.len())));
                }
                data.extend(v);
                rows += 1;
            }
            Err(_) if n == 0 => continue,
            Err(e) => return Err(CliError::Format(format!("{} row {}: {e}", path.display(), n + 1))),
        }
    }
    Ok(Mat::from_vec(rows, width, data))
}

fn rows_csv(x: &Mat) -> String {
    let mut s = (1..=x.cols).map(|j| format!("x_{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for k in 0..x.rows {
        s.push_str(&x.row(k).iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

/// `bench <name> [N=<agents>|<agents>]`, with explicitly set sizes, seeds,
/// schedule and loss keys overriding the benchmark's own settings.
fn bench(layout: &Layout, positional: &[String], cfg: &RunConfig, m: &mut Manifest) -> Result<PathBuf, CliError> {
    let (name, n) = match positional {
        [name] => (name.as_str(), None),
        [name, n] => {
            let v = n.strip_prefix("N=").unwrap_or(n);
            (name.as_str(), Some(v.parse::<usize>().map_err(|_| CliError::Usage(format!("bad agent count {n:?}")))?))
        }
        _ => return Err(CliError::Usage("bench <name> [N=<agents>]".into())),
    };
    let mut exp = Experiment::named(name, n)?;
    for (key, slot) in [("m_train", &mut exp.m_train), ("m_val", &mut exp.m_val), ("m_test", &mut exp.m_test)] {
        if cfg.is_explicit(key) {
            *slot = cfg.usize(key)?;
        }
    }
    if cfg.is_explicit("data_seed") {
        exp.data_seed = cfg.u64("data_seed")?;
    }
    for opt in [&mut exp.value_opt, &mut exp.cfg.optimizer] {
        if cfg.is_explicit("restarts") {
            opt.restarts = cfg.usize("restarts")?;
        }
        if cfg.is_explicit("base_seed") {
            opt.base_seed = cfg.u64("base_seed")?;
        }
        if cfg.is_explicit("adam_epochs") {
            opt.adam.epochs = cfg.usize("adam_epochs")?;
        }
        if cfg.is_explicit("adam_lr") {
            opt.adam.learning_rate = cfg.f64("adam_lr")?;
        }
        if cfg.is_explicit("lbfgs_iters") {
            opt.lbfgs.max_iters = cfg.usize("lbfgs_iters")?;
        }
        if cfg.is_explicit("lbfgs_memory") {
            opt.lbfgs.memory = cfg.usize("lbfgs_memory")?;
        }
    }
    if cfg.is_explicit("loss") {
        exp.cfg.loss = NiLoss::parse(cfg.str("loss"))?;
    }
    for (key, slot) in [("beta", &mut exp.cfg.beta), ("gamma", &mut exp.cfg.gamma), ("epsilon", &mut exp.cfg.epsilon)] {
        if cfg.is_explicit(key) {
            *slot = cfg.f64(key)?;
        }
    }
    let h = tag(cfg, &[&RunConfig::semantic_keys()], &positional.join(" "))?;
    let data = generate_datasets(&exp)?;
    let start = Instant::now();
    let r = run_with_data(&exp, &data)?;
    let wall = start.elapsed().as_secs_f64();
    let dir = layout.root.join("reports");
    let path = dir.join(format!("bench_{}_{h}.csv", exp.name));
    write_reports(&path, &r.reports, m)?;
    let model = layout.root.join("models").join(format!("bench_{}_{h}_gne.txt", exp.name));
    r.model.save(&model)?;
    m.output(&model)?;
    if let Some(v) = &r.values {
        let vp = layout.root.join("models").join(format!("bench_{}_{h}_values.txt", exp.name));
        v.save(&vp)?;
        m.output(&vp)?;
    }
    let timing = sibling(&path, ".timing.txt");
    let mut t = format!("wall_seconds {}\ntrain_seconds {}\nvalue_seconds {}\n", fmt_f64(wall), fmt_f64(r.train_seconds), fmt_f64(r.value_seconds));
    if let Some(s) = r.solver_time {
        let _ = writeln!(t, "solver_seconds_per_solve {}", fmt_f64(s));
    }
    write(&timing, &t)?;
    m.timing.push(timing);
    print!("{}", reports_to_table(&r.reports));
    Ok(path)
}

/// Re-runs a manifest's command with its recorded config and checks that
/// every reproducible output hashes the same.
pub fn rerun(manifest: &Path) -> Result<(), CliError> {
    let recorded = Manifest::load(manifest)?;
    let mut cfg = RunConfig::default();
    cfg.merge_text(&recorded.config)?;
    let fresh = dispatch(&recorded.command, &recorded.args, &cfg)?;
    let want: Vec<_> = recorded.outputs.iter().collect();
    let got: Vec<_> = fresh.outputs.iter().collect();
    if want != got {
        let diff: Vec<String> = want
            .iter()
            .filter(|w| !got.contains(w))
            .map(|(p, _)| p.display().to_string())
            .collect();
        return Err(CliError::Mismatch(format!("outputs differ: {}", diff.join(", "))));
    }
    println!("reproduced {} output(s) of {}", got.len(), recorded.command);
    Ok(())
}
