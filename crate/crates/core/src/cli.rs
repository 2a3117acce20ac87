//! Batch command-line interface.
//!
//! ```text
//! vqsad <command> [--config FILE] [--key value]...
//! vqsad help [command]
//! ```
//!
//! Parameters come from an optional `key = value` file and are overridden by
//! flags. Failures print one line to stderr,
//! `error code=<n> kind=<kind> reason="<text>"`, and exit with 2 (usage),
//! 3 (data) or 4 (numeric divergence).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::diffusion::{
    loss_csv, CleanGraph, DiffusionConfig, DiffusionModel, LossSign, Mode, SampleConfig, TrainConfig,
};
use crate::denoiser::Condition;
use crate::error::Error;
use crate::graph::{pair_list, read_dataset, write_dataset, AtomVocabulary, MolecularGraph};
use crate::metrics::{default_collision_eps, pooled_collision_rate, EvalReport, NspdkParams};
use crate::schedule::{dump_csv, DumpRow, ZetaBounds};
use crate::seed::derive_seed;
use crate::smiles::{ingest_smi, write_smiles};
use crate::vq::{usage_csv, VqConfig, VqModel, VqTrainConfig};

/// Command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub reason: String,
}

impl Failure {
    fn usage(reason: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "usage",
            reason: reason.into(),
        }
    }

    /// The single stderr line.
    pub fn line(&self) -> String {
        format!("error code={} kind={} reason={:?}", self.code, self.kind, self.reason)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match e {
            Error::Divergence(_) => (4, "divergence"),
            _ => (3, "data"),
        };
        Self {
            code,
            kind,
            reason: e.to_string(),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

struct Command {
    name: &'static str,
    about: &'static str,
    /// `(key, default)`; `None` marks a required key.
    keys: &'static [(&'static str, Option<&'static str>)],
}

const DIFFUSION_KEYS: &[(&str, Option<&str>)] = &[
    ("data", None),
    ("out", None),
    ("vocab", Some("qm9")),
    ("tokenizer", Some("")),
    ("steps", Some("2000")),
    ("batch", Some("8")),
    ("lr", Some("0.001")),
    ("seed", Some("0")),
    ("timesteps", Some("100")),
    ("lambda", Some("5")),
    ("weight_clamp", Some("10000")),
    ("t_min", Some("0.001")),
    ("temperature", Some("1")),
    ("relaxed", Some("true")),
    ("sign", Some("nelbo")),
    ("rate_term", Some("true")),
    ("aux_ce", Some("1")),
    ("conditional", Some("false")),
    ("cond_dropout", Some("0.1")),
    ("hidden", Some("64")),
    ("layers", Some("4")),
    ("time_dim", Some("16")),
    ("rrwp_k", Some("8")),
    ("k_poly", Some("6")),
    ("sched_hidden", Some("32")),
    ("zeta_min", Some("-10")),
    ("zeta_max", Some("10")),
    ("checkpoint_every", Some("0")),
];

const COMMANDS: &[Command] = &[
    Command {
        name: "ingest",
        about: "parse a .smi file into JSONL graphs plus a rejects file",
        keys: &[
            ("in", None),
            ("out", None),
            ("vocab", Some("qm9")),
            ("rejects", Some("")),
            ("property", Some("synthetic")),
        ],
    },
    Command {
        name: "train-vqvae",
        about: "train and freeze the atom/bond tokenizer",
        keys: &[
            ("data", None),
            ("out", None),
            ("vocab", Some("qm9")),
            ("steps", Some("2000")),
            ("batch", Some("16")),
            ("lr", Some("0.002")),
            ("seed", Some("0")),
            ("dim", Some("16")),
            ("atom_codes", Some("32")),
            ("bond_codes", Some("16")),
            ("hidden", Some("64")),
            ("gamma", Some("2")),
            ("beta", Some("0.25")),
            ("rrwp_k", Some("8")),
        ],
    },
    Command {
        name: "train-sad",
        about: "train masked diffusion over atom and bond categories",
        keys: DIFFUSION_KEYS,
    },
    Command {
        name: "train-vqsad",
        about: "train mask-and-replace diffusion over frozen tokenizer codes",
        keys: DIFFUSION_KEYS,
    },
    Command {
        name: "sample",
        about: "draw molecules from a trained diffusion checkpoint",
        keys: &[
            ("model", None),
            ("out", None),
            ("smiles", Some("")),
            ("count", Some("256")),
            ("seed", Some("0")),
            ("guidance", Some("0")),
            ("condition", Some("")),
        ],
    },
    Command {
        name: "eval",
        about: "validity, uniqueness and NSPDK MMD of samples against a reference set",
        keys: &[
            ("samples", None),
            ("reference", None),
            ("out", None),
            ("vocab", Some("qm9")),
            ("csv", Some("")),
            ("nspdk_radius", Some("3")),
            ("nspdk_distance", Some("4")),
        ],
    },
    Command {
        name: "collision",
        about: "embedding collision rate of one or more diffusion checkpoints",
        keys: &[
            ("model", None),
            ("out", None),
            ("count", Some("64")),
            ("seed", Some("0")),
            ("eps", Some("")),
        ],
    },
    Command {
        name: "schedule-dump",
        about: "per-element cumulative coefficients of one molecule over a time grid",
        keys: &[
            ("model", None),
            ("data", None),
            ("out", None),
            ("vocab", Some("qm9")),
            ("tokenizer", Some("")),
            ("index", Some("0")),
            ("points", Some("101")),
        ],
    },
];

/// Resolved parameters of one invocation.
#[derive(Debug, Clone)]
pub struct Params {
    command: &'static str,
    values: BTreeMap<String, String>,
}

impl Params {
    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn get<T: FromStr>(&self, key: &str) -> CmdResult<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Failure::usage(format!("{}: cannot parse {key} = {raw:?}", self.command)))
    }

    fn opt<T: FromStr>(&self, key: &str) -> CmdResult<Option<T>> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    fn opt_path(&self, key: &str) -> Option<PathBuf> {
        let r = self.raw(key);
        (!r.is_empty()).then(|| PathBuf::from(r))
    }

    fn vocab(&self) -> CmdResult<AtomVocabulary> {
        AtomVocabulary::by_name(self.raw("vocab")).map_err(|e| Failure::usage(e.to_string()))
    }
}

/// Parses `key = value` text; blank lines and `#` comments are ignored.
pub fn parse_config(text: &str) -> CmdResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("config line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn usage_text() -> String {
    let mut s = String::from("usage: vqsad <command> [--config FILE] [--key value]...\n\ncommands:\n");
    for c in COMMANDS {
        let _ = writeln!(s, "  {:<14} {}", c.name, c.about);
    }
    s
}

/// Command list, or the keys and defaults of one command.
fn help_text(command: Option<&str>) -> String {
    let Some(cmd) = command.and_then(|name| COMMANDS.iter().find(|c| c.name == name)) else {
        return usage_text();
    };
    let mut s = format!("vqsad {}: {}\n\nkeys:\n", cmd.name, cmd.about);
    for (k, default) in cmd.keys {
        match default {
            None => _ = writeln!(s, "  --{k:<17} (required)"),
            Some("") => _ = writeln!(s, "  --{k:<17} (optional)"),
            Some(d) => _ = writeln!(s, "  --{k:<17} {d}"),
        }
    }
    s
}

/// Resolves defaults, the config file and flags for `args` (command first).
pub fn parse_args(args: &[String]) -> CmdResult<Params> {
    let Some(name) = args.first() else {
        return Err(Failure::usage("missing command; run `vqsad help` for the list"));
    };
    let cmd = COMMANDS
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Failure::usage(format!("unknown command {name:?}; run `vqsad help` for the list")))?;
    let valid = || cmd.keys.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ");
    let check = |k: &str| -> CmdResult<()> {
        if cmd.keys.iter().any(|(key, _)| *key == k) {
            Ok(())
        } else {
            Err(Failure::usage(format!("{name}: unknown key {k:?}; valid keys: {}", valid())))
        }
    };

    let mut flags = Vec::new();
    let mut config = None;
    let mut rest = args[1..].iter();
    while let Some(a) = rest.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| Failure::usage(format!("{name}: expected --key, got {a:?}")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = rest
                    .next()
                    .ok_or_else(|| Failure::usage(format!("{name}: --{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        let key = key.replace('-', "_");
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            flags.push((key, value));
        }
    }

    let mut values: BTreeMap<String, String> = cmd
        .keys
        .iter()
        .filter_map(|(k, d)| d.map(|d| (k.to_string(), d.to_string())))
        .collect();
    if let Some(path) = config {
        let text = fs::read_to_string(&path).map_err(|e| io_fail(&path, e))?;
        for (k, v) in parse_config(&text)? {
            check(&k)?;
            values.insert(k, v);
        }
    }
    for (k, v) in flags {
        check(&k)?;
        values.insert(k, v);
    }
    for (k, d) in cmd.keys {
        if d.is_none() && !values.contains_key(*k) {
            let reason = if *k == "tokenizer" {
                "tokenizer checkpoint required".to_string()
            } else {
                format!("{name}: missing required key {k}")
            };
            return Err(Failure::usage(reason));
        }
    }
    Ok(Params {
        command: cmd.name,
        values,
    })
}

/// Runs one command line (without the program name) and returns the exit code.
pub fn run(args: &[String]) -> i32 {
    if let Some("help" | "--help" | "-h") = args.first().map(String::as_str) {
        print!("{}", help_text(args.get(1).map(String::as_str)));
        return 0;
    }
    match parse_args(args).and_then(|p| execute(&p)) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            0
        }
        Err(f) => {
            eprintln!("{}", f.line());
            f.code
        }
    }
}

fn execute(p: &Params) -> CmdResult<String> {
    match p.command {
        "ingest" => ingest(p),
        "train-vqvae" => train_vqvae(p),
        "train-sad" => train_diffusion(p, Mode::Sad),
        "train-vqsad" => train_diffusion(p, Mode::VqSad),
        "sample" => sample(p),
        "eval" => eval(p),
        "collision" => collision(p),
        "schedule-dump" => schedule_dump(p),
        other => Err(Failure::usage(format!("unknown command {other:?}"))),
    }
}

fn write_file(path: &Path, text: &str) -> CmdResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn ingest(p: &Params) -> CmdResult<String> {
    let vocab = p.vocab()?;
    let input = p.path("in");
    let out = p.path("out");
    let text = fs::read_to_string(&input).map_err(|e| io_fail(&input, e))?;
    let (mut graphs, rejects) = ingest_smi(&text, &vocab);
    match p.raw("property") {
        "synthetic" => {
            for g in &mut graphs {
                g.property = Some(g.synthetic_property(&vocab));
            }
        }
        "none" => {}
        other => return Err(Failure::usage(format!("property must be synthetic or none, got {other:?}"))),
    }
    write_dataset(&graphs, &vocab, &out)?;
    let rej_path = p
        .opt_path("rejects")
        .unwrap_or_else(|| PathBuf::from(format!("{}.rejects", out.display())));
    let mut rej = String::from("line\tsmiles\treason\n");
    for r in &rejects {
        let _ = writeln!(rej, "{}\t{}\t{}", r.line, r.smiles, r.reason);
    }
    write_file(&rej_path, &rej)?;
    Ok(format!("ingested {} molecules, {} rejects", graphs.len(), rejects.len()))
}

fn train_vqvae(p: &Params) -> CmdResult<String> {
    let vocab = p.vocab()?;
    let graphs = read_dataset(&p.path("data"), &vocab)?;
    let config = VqConfig {
        dim: p.get("dim")?,
        atom_codes: p.get("atom_codes")?,
        bond_codes: p.get("bond_codes")?,
        hidden: p.get("hidden")?,
        gamma: p.get("gamma")?,
        beta: p.get("beta")?,
        rrwp_k: p.get("rrwp_k")?,
    };
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let seed: u64 = p.get("seed")?;
    let mut model = VqModel::new(config, vocab.len(), derive_seed(seed, "vq-init", 0))?;
    let tc = VqTrainConfig {
        steps: p.get("steps")?,
        batch: p.get("batch")?,
        lr: p.get("lr")?,
        seed: derive_seed(seed, "vq-train", 0),
    };
    let report = model.train(&graphs, &tc)?;
    model.freeze();
    let out = p.path("out");
    model.save(&out)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    write_file(&out.join("loss.csv"), &csv)?;
    let (atoms, bonds) = model.usage(&graphs)?;
    write_file(&out.join("atom_usage.csv"), &usage_csv(&atoms))?;
    write_file(&out.join("bond_usage.csv"), &usage_csv(&bonds))?;
    let acc = model.reconstruction_accuracy(&graphs)?;
    Ok(format!("tokenizer saved to {}, reconstruction {acc:.4}", out.display()))
}

fn diffusion_config(p: &Params, mode: Mode) -> CmdResult<DiffusionConfig> {
    let base = DiffusionConfig::new(mode);
    let sign = match p.raw("sign") {
        "nelbo" => LossSign::Nelbo,
        "printed" => LossSign::Printed,
        other => return Err(Failure::usage(format!("sign must be nelbo or printed, got {other:?}"))),
    };
    let bounds = ZetaBounds::new(p.get("zeta_min")?, p.get("zeta_max")?).map_err(|e| Failure::usage(e.to_string()))?;
    let cfg = DiffusionConfig {
        timesteps: p.get("timesteps")?,
        lambda: p.get("lambda")?,
        weight_clamp: p.get("weight_clamp")?,
        t_min: p.get("t_min")?,
        temperature: p.get("temperature")?,
        relaxed: p.get("relaxed")?,
        sign,
        rate_term: p.get("rate_term")?,
        aux_ce: p.get("aux_ce")?,
        conditional: p.get("conditional")?,
        cond_dropout: p.get("cond_dropout")?,
        hidden: p.get("hidden")?,
        layers: p.get("layers")?,
        time_dim: p.get("time_dim")?,
        rrwp_k: p.get("rrwp_k")?,
        scheduler: crate::schedule::SchedulerConfig {
            k_poly: p.get("k_poly")?,
            hidden: p.get("sched_hidden")?,
            bounds,
            ..base.scheduler
        },
        ..base
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn load_tokenizer(path: Option<PathBuf>) -> CmdResult<VqModel> {
    let path = path.ok_or_else(|| Failure::usage("tokenizer checkpoint required"))?;
    let tok = VqModel::load(&path).map_err(|e| Failure {
        code: 3,
        kind: "data",
        reason: format!("tokenizer checkpoint required: {e}"),
    })?;
    if !tok.is_frozen() {
        return Err(Failure {
            code: 3,
            kind: "data",
            reason: format!("tokenizer checkpoint required: {} is not frozen", path.display()),
        });
    }
    Ok(tok)
}

fn train_diffusion(p: &Params, mode: Mode) -> CmdResult<String> {
    let vocab = p.vocab()?;
    let cfg = diffusion_config(p, mode)?;
    // check the precondition before touching the data
    let tokenizer = match mode {
        Mode::VqSad => Some(load_tokenizer(p.opt_path("tokenizer"))?),
        Mode::Sad => None,
    };
    let graphs = read_dataset(&p.path("data"), &vocab)?;
    let seed: u64 = p.get("seed")?;
    let init = derive_seed(seed, "diffusion-init", 0);
    let mut model = match &tokenizer {
        Some(tok) => DiffusionModel::vq_sad(cfg, tok, &vocab, init)?,
        None => DiffusionModel::sad(cfg, &vocab, init)?,
    };
    let data = model.prepare(&graphs, tokenizer.as_ref())?;
    let tc = TrainConfig {
        steps: p.get("steps")?,
        batch: p.get("batch")?,
        lr: p.get("lr")?,
        seed: derive_seed(seed, "diffusion-train", 0),
    };
    let every: usize = p.get("checkpoint_every")?;
    let out = p.path("out");
    let before = tokenizer.as_ref().map(|t| t.store.checksum());
    let records = model.train_with(&data, &tc, |r, m| {
        if every > 0 && (r.step + 1) % every == 0 && r.step + 1 < tc.steps {
            let mut snapshot = m.clone();
            snapshot.calibrate(&data)?;
            snapshot.save(&out.join(format!("step-{:06}", r.step + 1)))?;
        }
        Ok(())
    })?;
    if let (Some(tok), Some(before)) = (&tokenizer, before) {
        if tok.store.checksum() != before {
            return Err(Error::Contract("tokenizer changed during training".into()).into());
        }
    }
    model.save(&out)?;
    write_file(&out.join("loss.csv"), &loss_csv(&records))?;
    let clamped: usize = records.iter().map(|r| r.clamped).sum();
    let last = records.last().map_or(f64::NAN, |r| r.loss);
    Ok(format!(
        "model saved to {}, final loss {last:.4}, clamped weights {clamped}",
        out.display()
    ))
}

fn sample(p: &Params) -> CmdResult<String> {
    let model = DiffusionModel::load(&p.path("model"))?;
    let vocab = AtomVocabulary::by_name(&model.vocab)?;
    let cfg = SampleConfig {
        count: p.get("count")?,
        seed: derive_seed(p.get("seed")?, "sample", 0),
        guidance: p.get("guidance")?,
        condition: p.opt("condition")?,
        trace: false,
    };
    let outs = model.sample(&cfg)?;
    let mols: Vec<MolecularGraph> = outs.iter().map(|o| o.molecule.clone()).collect();
    write_dataset(&mols, &vocab, &p.path("out"))?;
    if let Some(path) = p.opt_path("smiles") {
        let mut text = String::new();
        for m in &mols {
            // disconnected or over-valent samples have no SMILES; keep line alignment
            let s = write_smiles(m, &vocab).unwrap_or_default();
            let _ = writeln!(text, "{s}");
        }
        write_file(&path, &text)?;
    }
    let forced: usize = outs.iter().map(|o| o.forced).sum();
    Ok(format!("wrote {} samples, forced reveals {forced}", mols.len()))
}

fn eval(p: &Params) -> CmdResult<String> {
    let vocab = p.vocab()?;
    let samples = read_dataset(&p.path("samples"), &vocab)?;
    let reference = read_dataset(&p.path("reference"), &vocab)?;
    let nspdk = NspdkParams {
        radius: p.get("nspdk_radius")?,
        distance: p.get("nspdk_distance")?,
    };
    let report = EvalReport::evaluate(&samples, &reference, &vocab, nspdk)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    write_file(&p.path("out"), &(json + "\n"))?;
    let row = format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row());
    if let Some(csv) = p.opt_path("csv") {
        write_file(&csv, &row)?;
    }
    Ok(row.trim_end().to_string())
}

fn collision(p: &Params) -> CmdResult<String> {
    let mut csv = String::from("model,eps,collision_rate,graphs\n");
    let count: usize = p.get("count")?;
    let seed: u64 = p.get("seed")?;
    let eps: Option<f64> = p.opt("eps")?;
    for dir in p.raw("model").split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let model = DiffusionModel::load(Path::new(dir))?;
        let eps = eps.unwrap_or_else(|| default_collision_eps(model.config.hidden));
        let outs = model.sample(&SampleConfig {
            count,
            seed: derive_seed(seed, "collision", 0),
            trace: true,
            ..Default::default()
        })?;
        let traces: Vec<_> = outs.into_iter().filter_map(|o| o.trace).collect();
        let rate = pooled_collision_rate(&traces, eps)?;
        let _ = writeln!(csv, "{dir},{eps},{rate},{count}");
    }
    write_file(&p.path("out"), &csv)?;
    Ok(csv.trim_end().to_string())
}

fn schedule_dump(p: &Params) -> CmdResult<String> {
    let model = DiffusionModel::load(&p.path("model"))?;
    let vocab = p.vocab()?;
    let graphs = read_dataset(&p.path("data"), &vocab)?;
    let index: usize = p.get("index")?;
    let g = graphs
        .get(index)
        .ok_or_else(|| Failure::usage(format!("index {index} past {} molecules", graphs.len())))?;
    let clean = match model.config.mode {
        Mode::Sad => CleanGraph::from_molecule(g, None),
        Mode::VqSad => {
            let tok = load_tokenizer(p.opt_path("tokenizer"))?;
            model.check_tokenizer(&tok)?;
            CleanGraph::from_tokens(&tok.tokenize(g)?, None)
        }
    };
    let points: usize = p.get("points")?;
    if points < 2 {
        return Err(Failure::usage("points must be at least 2"));
    }
    let times: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let (nodes, edges) = model.coefficients(&clean, Condition::Null, &times)?;
    let pairs = pair_list(clean.n());
    let mut rows = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        for (i, &c) in nodes[k].iter().enumerate() {
            rows.push(DumpRow {
                t,
                element: format!("node{i}"),
                coeffs: c,
            });
        }
        for (&(i, j), &c) in pairs.iter().zip(&edges[k]) {
            rows.push(DumpRow {
                t,
                element: format!("edge{i}-{j}"),
                coeffs: c,
            });
        }
    }
    write_file(&p.path("out"), &dump_csv(&rows))?;
    Ok(format!("wrote {} rows", rows.len()))
}
