//! The `mreader` command line.
//!
//! Exit status is 0 on success, 1 for validation and compilation failures
//! and 2 for unreadable or malformed input. Diagnostics go to standard
//! error and results to standard output.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{
    convert_snli, convert_squad, convert_triples, load_jtr, question_to_triple, to_jtr_string,
    CorpusError, Dataset, QASetting, Triple, TripleStore, SEP,
};
use crate::dsl::{self, Dims, DslError};
use crate::engine::AdamConfig;
use crate::framework::persist::read_config;
use crate::framework::{
    self, misclassification_report, Hook, LossHook, ReaderConfig, ReaderError, Task,
};
use crate::zoo::{self, LpBundle, LpTrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mreader",
    version,
    about = "Train, evaluate and query machine reading models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceFormat {
    Squad,
    Snli,
    Triples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Lp,
    Nli,
    Qa,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Lp => Task::Lp,
            TaskArg::Nli => Task::Nli,
            TaskArg::Qa => Task::Qa,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an external dataset to the JSON dataset format.
    Convert {
        #[arg(long = "from", value_enum)]
        from: SourceFormat,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file; standard output when omitted or `-`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the schema and answer spans of a dataset (`-` reads stdin).
    Validate { path: PathBuf },
    /// Train a reader and save it.
    Train {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        save: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print metrics of a saved reader on a dataset.
    Evaluate {
        #[arg(long)]
        load: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Rank link-prediction answers among entities not forming other known facts.
        #[arg(long)]
        filtered: bool,
    },
    /// Answer questions typed on standard input.
    Interact {
        #[arg(long)]
        load: PathBuf,
    },
    /// List instances whose gold answer probability lies in `[lo, hi]`.
    Inspect {
        #[arg(long)]
        load: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 0.2)]
        hi: f64,
        #[arg(long, default_value_t = 10)]
        limit: usize,
    },
    /// Architecture tools.
    Arch(ArchArgs),
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    #[command(subcommand)]
    pub command: ArchCommand,
}

#[derive(Debug, Subcommand)]
pub enum ArchCommand {
    /// Compile an architecture and print the shape of every key.
    Check {
        path: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Reader config supplying `repr_dim` and `repr_dim_input`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// A failed command: exit status and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::io(e.to_string())
    }
}

impl From<DslError> for Failure {
    fn from(e: DslError) -> Self {
        Failure::invalid(e.to_string())
    }
}

impl From<ReaderError> for Failure {
    fn from(e: ReaderError) -> Self {
        let code = match &e {
            ReaderError::Io(_)
            | ReaderError::Corpus(_)
            | ReaderError::Text(_)
            | ReaderError::CorruptCheckpoint(_)
            | ReaderError::VersionMismatch { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<zoo::LpError> for Failure {
    fn from(e: zoo::LpError) -> Self {
        Failure::invalid(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Standard streams of one invocation.
pub struct Io<'a> {
    pub stdin: &'a mut dyn BufRead,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(io.stderr, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, io) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(io.stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn read_text(path: &Path, stdin: &mut dyn BufRead) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut s = String::new();
        stdin.read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path, stdin: &mut dyn BufRead) -> Result<Dataset, Failure> {
    let text = read_text(path, stdin)?;
    load_jtr(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn execute(command: Command, io: &mut Io<'_>) -> CmdResult {
    match command {
        Command::Convert { from, input, out } => convert(from, &input, out.as_deref(), io),
        Command::Validate { path } => validate(&path, io),
        Command::Train {
            task,
            config,
            data,
            save,
            seed,
        } => train(task.into(), config.as_deref(), &data, &save, seed, io),
        Command::Evaluate {
            load,
            data,
            filtered,
        } => evaluate(&load, &data, filtered, io),
        Command::Interact { load } => interact(&load, io),
        Command::Inspect {
            load,
            data,
            lo,
            hi,
            limit,
        } => inspect(&load, &data, lo, hi, limit, io),
        Command::Arch(ArchArgs {
            command: ArchCommand::Check { path, task, config },
        }) => arch_check(&path, task.into(), config.as_deref(), io),
    }
}

fn convert(from: SourceFormat, input: &Path, out: Option<&Path>, io: &mut Io<'_>) -> CmdResult {
    let text = read_text(input, io.stdin)?;
    let located = |e: CorpusError| Failure::io(format!("{}: {e}", input.display()));
    let (dataset, dropped) = match from {
        SourceFormat::Squad => {
            let (d, stats) = convert_squad(&text).map_err(located)?;
            (d, stats.dropped)
        }
        SourceFormat::Snli => {
            let (d, stats) = convert_snli(&text).map_err(located)?;
            (d, stats.dropped)
        }
        SourceFormat::Triples => (convert_triples(&text).map_err(located)?.0, 0),
    };
    let json = to_jtr_string(&dataset);
    match out {
        Some(p) if p != Path::new("-") => fs::write(p, json)?,
        _ => io.stdout.write_all(json.as_bytes())?,
    }
    writeln!(io.stderr, "converted {}", dataset.len())?;
    writeln!(io.stderr, "dropped {dropped}")?;
    Ok(())
}

fn validate(path: &Path, io: &mut Io<'_>) -> CmdResult {
    let text = read_text(path, io.stdin)?;
    let d = load_jtr(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    let answers: usize = d.instances.iter().map(|i| i.answers.len()).sum();
    let spans: usize = d
        .instances
        .iter()
        .flat_map(|i| &i.answers)
        .filter(|a| a.span.is_some())
        .count();
    writeln!(io.stdout, "questions\t{}", d.len())?;
    writeln!(io.stdout, "answers\t{answers}")?;
    writeln!(io.stdout, "spans\t{spans}")?;
    Ok(())
}

/// Reads a config file, resolving its file references against the file's
/// directory.
fn read_reader_config(path: Option<&Path>) -> Result<(ReaderConfig, Option<String>), Failure> {
    let Some(path) = path else {
        return Ok((ReaderConfig::default(), None));
    };
    let text =
        fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    let mut config = ReaderConfig::from_toml(&text)
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let arch = match &config.arch {
        Some(a) => {
            let p = base.join(a);
            Some(fs::read_to_string(&p).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    if let Some(e) = &config.embeddings {
        config.embeddings = Some(base.join(e).to_string_lossy().into_owned());
    }
    Ok((config, arch))
}

/// Facts of a triple TSV file, or of a JSON dataset of link-prediction
/// questions.
fn read_facts(
    path: &Path,
    stdin: &mut dyn BufRead,
) -> Result<Vec<(String, String, String)>, Failure> {
    let text = read_text(path, stdin)?;
    if text.trim_start().starts_with('{') {
        let d = load_jtr(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        let mut facts = Vec::new();
        for (i, inst) in d.instances.iter().enumerate() {
            let answer = inst.answers.first().map_or("", |a| a.text.as_str());
            let fact = question_to_triple(&inst.question, answer).ok_or_else(|| {
                Failure::io(format!(
                    "{}: instance {i} is not a triple question",
                    path.display()
                ))
            })?;
            if !facts.contains(&fact) {
                facts.push(fact);
            }
        }
        return Ok(facts);
    }
    let (_, store) =
        convert_triples(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    Ok(store
        .triples()
        .iter()
        .map(|t| {
            (
                store.entity(t.s).to_string(),
                store.relation(t.p).to_string(),
                store.entity(t.o).to_string(),
            )
        })
        .collect())
}

fn train(
    task: Task,
    config_path: Option<&Path>,
    data: &Path,
    save: &Path,
    seed: Option<u64>,
    io: &mut Io<'_>,
) -> CmdResult {
    let (mut config, arch) = read_reader_config(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if task == Task::Lp {
        let mut store = TripleStore::new();
        for (s, p, o) in read_facts(data, io.stdin)? {
            store.insert(&s, &p, &o);
        }
        let train_config = LpTrainConfig::from_reader(&config);
        let (model, report) = zoo::train_lp(&store, &train_config)?;
        let per_epoch = store.len().div_ceil(config.batch_size);
        for (e, loss) in report.epoch_losses.iter().enumerate() {
            writeln!(io.stdout, "{}\tloss\t{loss:.4}", (e + 1) * per_epoch)?;
        }
        zoo::save_lp(
            &LpBundle {
                config,
                model,
                store,
            },
            save,
        )?;
        return Ok(());
    }
    let dataset = load_dataset(data, io.stdin)?;
    let arch = arch.unwrap_or_else(|| match task {
        Task::Qa => dsl::QA_SPAN_BASELINE.to_string(),
        _ => dsl::NLI_BASELINE.to_string(),
    });
    let epochs = config.epochs;
    let optim = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut hooks: Vec<Box<dyn Hook>> = vec![Box::new(LossHook::new(config.log_interval))];
    let mut reader = zoo::text_reader(task, &arch, config)?;
    let report = reader.train(&dataset, optim, &mut hooks, epochs)?;
    for event in &report.events {
        writeln!(io.stdout, "{event}")?;
    }
    framework::save(&reader, save)?;
    Ok(())
}

fn known_with(store: &TripleStore, extra: &[Triple]) -> TripleStore {
    let mut known = store.clone();
    for &t in extra {
        known.insert_ids(t);
    }
    known
}

fn evaluate(load: &Path, data: &Path, filtered: bool, io: &mut Io<'_>) -> CmdResult {
    let (task, _) = read_config(load)?;
    let reports = if task == Task::Lp {
        let bundle = zoo::load_lp(load)?;
        let mut test = Vec::new();
        for (s, p, o) in read_facts(data, io.stdin)? {
            test.push(bundle.store.lookup(&s, &p, &o)?);
        }
        if test.is_empty() {
            return Err(Failure::invalid("no test facts"));
        }
        let known = known_with(&bundle.store, &test);
        zoo::evaluate_lp(&bundle.model, &known, &test, filtered)?
    } else {
        let reader = framework::load(load)?;
        reader.evaluate(&load_dataset(data, io.stdin)?)?
    };
    for r in reports {
        writeln!(io.stdout, "{r}")?;
    }
    Ok(())
}

/// Next question and its support lines, or `None` at end of input.
fn read_query(stdin: &mut dyn BufRead) -> Result<Option<QASetting>, Failure> {
    let mut line = String::new();
    let question = loop {
        line.clear();
        if stdin.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        let q = line.trim_end_matches(['\n', '\r']);
        if !q.trim().is_empty() {
            break q.to_string();
        }
    };
    let mut support = Vec::new();
    loop {
        line.clear();
        if stdin.read_line(&mut line)? == 0 {
            break;
        }
        let s = line.trim_end_matches(['\n', '\r']);
        if s.is_empty() {
            break;
        }
        support.push(s.to_string());
    }
    Ok(Some(QASetting::new(question, support)))
}

fn interact(load: &Path, io: &mut Io<'_>) -> CmdResult {
    let (task, _) = read_config(load)?;
    if task == Task::Lp {
        let bundle = zoo::load_lp(load)?;
        while let Some(q) = read_query(io.stdin)? {
            match lp_answer(&bundle, &q.question) {
                Ok((name, score)) => writeln!(io.stdout, "{name}\t{score:.6}")?,
                Err(m) => writeln!(io.stderr, "error: {m}")?,
            }
            io.stdout.flush()?;
        }
        return Ok(());
    }
    let reader = framework::load(load)?;
    while let Some(q) = read_query(io.stdin)? {
        let answers = reader.answer(&Dataset::new("interactive", vec![q]))?;
        let a = &answers[0];
        match a.span {
            Some(s) => writeln!(
                io.stdout,
                "{}\t{:.6}\t{}:{}-{}",
                a.text, a.score, s.doc, s.start, s.end
            )?,
            None => writeln!(io.stdout, "{}\t{:.6}", a.text, a.score)?,
        }
        io.stdout.flush()?;
    }
    Ok(())
}

/// Highest-scoring entity for `s [SEP] p [SEP] ?` or `? [SEP] p [SEP] o`.
fn lp_answer(bundle: &LpBundle, question: &str) -> Result<(String, f64), String> {
    let parts: Vec<&str> = question.split(SEP).map(str::trim).collect();
    let [s, p, o] = parts.as_slice() else {
        return Err(format!("expected `s{SEP}p{SEP}?` or `?{SEP}p{SEP}o`"));
    };
    let store = &bundle.store;
    let entity = |n: &str| {
        store
            .entity_id(n)
            .ok_or_else(|| format!("unknown entity {n:?}"))
    };
    let p = store
        .relation_id(p)
        .ok_or_else(|| format!("unknown relation {p:?}"))?;
    let score = |a: usize, b: usize| bundle.model.score(a, p, b).map_err(|e| e.to_string());
    let (fixed, subject_open) = match (*s, *o) {
        ("?", o) if o != "?" => (entity(o)?, true),
        (s, "?") if s != "?" => (entity(s)?, false),
        _ => return Err("exactly one slot must be `?`".into()),
    };
    let mut best = (0, f64::NEG_INFINITY);
    for e in 0..store.num_entities() {
        let v = if subject_open {
            score(e, fixed)?
        } else {
            score(fixed, e)?
        };
        if v > best.1 {
            best = (e, v);
        }
    }
    Ok((store.entity(best.0).to_string(), best.1))
}

fn inspect(load: &Path, data: &Path, lo: f64, hi: f64, limit: usize, io: &mut Io<'_>) -> CmdResult {
    let reader = framework::load(load)?;
    let dataset = load_dataset(data, io.stdin)?;
    for ex in misclassification_report(&reader, &dataset, lo, hi, limit)? {
        writeln!(
            io.stdout,
            "{}\t{:.4}\t{}\t{}\t{}",
            ex.index, ex.probability, ex.gold, ex.prediction, ex.question
        )?;
    }
    Ok(())
}

fn arch_check(path: &Path, task: Task, config: Option<&Path>, io: &mut Io<'_>) -> CmdResult {
    let text = read_text(path, io.stdin)?;
    let (config, _) = read_reader_config(config)?;
    let dims = Dims {
        repr_dim: config.repr_dim,
        repr_dim_input: config.repr_dim_input,
    };
    let graph = dsl::compile(&text, task, dims)
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    write!(io.stdout, "{}", graph.shape_table())?;
    Ok(())
}
