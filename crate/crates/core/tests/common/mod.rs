//! Scripted benchmarks shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

pub const IDENTICAL: [&str; 5] = [
    "Wings won the first award.",
    "Wings won the first award.",
    "Wings won the first award.",
    "Wings won the first award.",
    "Wings won the first award.",
];

/// Pairwise word-disjoint, so degree uncertainty is 1 - 5/25 = 0.8.
pub const DISJOINT: [&str; 5] = ["Alpha beta.", "Gamma delta.", "Epsilon zeta.", "Eta theta.", "Iota kappa."];

/// One identical block of three plus two singletons: 1 - (9 + 2)/25 = 0.56.
pub const MIXED: [&str; 5] = ["Red blue.", "Red blue.", "Red blue.", "Green yellow.", "Orange purple."];

pub struct Bench {
    pub dir: PathBuf,
    pub corpus: PathBuf,
    pub index: PathBuf,
    pub dataset: PathBuf,
    pub script: PathBuf,
}

impl Bench {
    pub fn report_dir(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// TOML config pointing at this benchmark, with `policy` spliced in.
    pub fn config_toml(&self, policy: &str, report: &str) -> String {
        format!(
            "seed = 7\n\n[generator]\nkind = \"mock\"\nscript = {:?}\n\n[policy]\n{policy}\n\n[paths]\nindex = {:?}\ndataset = {:?}\nreport_dir = {:?}\n",
            self.script,
            self.index,
            self.dataset,
            self.report_dir(report),
        )
    }
}

fn corpus_lines() -> String {
    let docs = [
        ("d1", "Wings", "Wings is a silent war film directed by William Wellman."),
        ("d2", "William Wellman", "William Wellman was an American film director."),
        ("d3", "Sunrise", "Sunrise is a silent film directed by F. W. Murnau."),
        ("d4", "Academy Awards", "The first award ceremony honored films of 1927 and 1928."),
    ];
    docs.iter()
        .map(|(id, title, text)| json!({"id": id, "title": title, "text": text}).to_string() + "\n")
        .collect()
}

fn entry(out: &mut String, q: &str, step: usize, mode: &str, outputs: &[&str]) {
    let line = json!({"question": q, "step": step, "mode": mode, "outputs": outputs});
    writeln!(out, "{line}").unwrap();
}

/// Greedy, sample, subquery and with-docs outputs for one step.
fn full_step(out: &mut String, q: &str, step: usize, sentence: &str, samples: &[&str]) {
    entry(out, q, step, "greedy", &[sentence]);
    entry(out, q, step, "sample", samples);
    entry(out, q, step, "subquery", &[&format!("What supports: {sentence}")]);
    entry(out, q, step, "with_docs", &[sentence]);
}

fn write_common(dir: &Path, dataset: String, script: String) -> Bench {
    let corpus = dir.join("corpus.jsonl");
    let index = dir.join("index.bin");
    let dataset_path = dir.join("dataset.jsonl");
    let script_path = dir.join("script.jsonl");
    fs::write(&corpus, corpus_lines()).unwrap();
    fs::write(&dataset_path, dataset).unwrap();
    fs::write(&script_path, script).unwrap();
    let docs = uqrag::retrieval::read_corpus(std::io::BufReader::new(fs::File::open(&corpus).unwrap())).unwrap();
    uqrag::retrieval::InvertedIndex::build(docs).unwrap().save(&index).unwrap();
    Bench { dir: dir.to_path_buf(), corpus, index, dataset: dataset_path, script: script_path }
}

/// Two questions. q1: step 0 identical samples, step 1 disjoint samples
/// (retrieval in subquery mode), step 2 states the answer. q2: two
/// identical-sample steps, no retrieval.
pub fn micro_benchmark(dir: &Path) -> Bench {
    let dataset = [
        json!({"id": "q1", "question": "Who directed the first Best Picture winner?", "answers": ["William Wellman"]}),
        json!({"id": "q2", "question": "Which film won the first Best Picture award?", "answers": ["Wings"]}),
    ]
    .iter()
    .map(|v| v.to_string() + "\n")
    .collect();

    let mut s = String::new();
    entry(&mut s, "q1", 0, "greedy", &["Wings won the first award. It was a silent film."]);
    entry(&mut s, "q1", 0, "sample", &IDENTICAL);
    entry(&mut s, "q1", 1, "greedy", &["Wings was directed by Clarence Brown."]);
    entry(&mut s, "q1", 1, "sample", &DISJOINT);
    entry(&mut s, "q1", 1, "subquery", &["Who directed Wings?\nignored"]);
    entry(&mut s, "q1", 1, "with_docs", &["Wings was directed by William Wellman."]);
    entry(&mut s, "q1", 2, "greedy", &["So the answer is William Wellman."]);
    entry(&mut s, "q1", 2, "sample", &IDENTICAL);
    entry(&mut s, "q2", 0, "greedy", &["Wings won the first award."]);
    entry(&mut s, "q2", 0, "sample", &IDENTICAL);
    entry(&mut s, "q2", 1, "greedy", &["So the answer is Wings."]);
    entry(&mut s, "q2", 1, "sample", &IDENTICAL);
    write_common(dir, dataset, s)
}

pub const BENCH_QUESTIONS: usize = 20;
pub const BENCH_STEPS: usize = 4;

/// Twenty questions of four steps each. Sample diversity per step:
/// identical (U=0), disjoint (U=0.8), mixed (U=0.56), identical with the
/// answer. Half of all steps carry low-diversity samples.
pub fn benchmark20(dir: &Path) -> Bench {
    let mut dataset = String::new();
    let mut s = String::new();
    for i in 0..BENCH_QUESTIONS {
        let q = format!("b{i:02}");
        let answer = format!("Film{i}");
        writeln!(dataset, "{}", json!({"id": q, "question": format!("Which film is number {i}?"), "answers": [answer]}))
            .unwrap();
        full_step(&mut s, &q, 0, "Wings won the first award.", &IDENTICAL);
        full_step(&mut s, &q, 1, "Wings was directed by William Wellman.", &DISJOINT);
        full_step(&mut s, &q, 2, "Wellman also directed other films.", &MIXED);
        let last = format!("So the answer is {answer}.");
        full_step(&mut s, &q, 3, &last, &IDENTICAL);
    }
    write_common(dir, dataset, s)
}
