//! Drives the command-line interface end to end in a temporary directory:
//! ingest, tokenizer, VQ-SAD training, sampling, evaluation, collision rate
//! and a schedule dump. Steps are kept small so it finishes quickly.
//!
//! cargo run --release --example cli_pipeline -- [steps]

use std::path::Path;

fn run(line: &str) {
    println!("$ vqsad {line}");
    let args: Vec<String> = line.split_whitespace().map(String::from).collect();
    let code = vqsad::cli::run(&args);
    assert_eq!(code, 0, "command failed");
}

fn main() -> std::io::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).display().to_string();
    let smi = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/qm9_toy.smi");

    run(&format!("ingest --in {} --out {} --rejects {}", smi.display(), p("train.jsonl"), p("rejects.txt")));
    run(&format!("train-vqvae --data {} --out {} --steps {steps}", p("train.jsonl"), p("tok")));
    run(&format!(
        "train-vqsad --data {} --tokenizer {} --out {} --steps {steps}",
        p("train.jsonl"),
        p("tok"),
        p("vq")
    ));
    run(&format!("sample --model {} --out {} --smiles {} --count 16", p("vq"), p("samples.jsonl"), p("samples.smi")));
    run(&format!("eval --samples {} --reference {} --out {}", p("samples.jsonl"), p("train.jsonl"), p("eval.json")));
    run(&format!("collision --model {} --out {} --count 8", p("vq"), p("collision.csv")));
    run(&format!(
        "schedule-dump --model {} --data {} --tokenizer {} --out {} --points 11",
        p("vq"),
        p("train.jsonl"),
        p("tok"),
        p("schedule.csv")
    ));
    let head: Vec<String> = std::fs::read_to_string(p("schedule.csv"))?.lines().take(4).map(String::from).collect();
    println!("\nschedule.csv begins\n{}", head.join("\n"));
    Ok(())
}
