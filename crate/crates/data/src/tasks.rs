//! Synthetic, seed-deterministic task generators.
//!
//! Eight desk-scale tasks stand in for the full-scale corpora while keeping
//! the same modality signatures (speech->label, image->label, image->text,
//! text->tree-text, four text->text mapping pairs), plus the copy and
//! reverse diagnostic tasks. Every sample is a pure function of
//! `(task, seed, index)`; train and dev splits use disjoint index ranges.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock};

use mm_tensor::{RngStream, Tensor};

use crate::error::{DataError, Result};

/// External data domains handled by the modality nets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Language,
    Image,
    Audio,
    Categorical,
}

/// Which bijective word-mapping a translation task applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LangPair {
    Ab,
    Ba,
    Ac,
    Ca,
}

#[derive(Debug, Clone)]
pub enum TaskKind {
    Copy { min_words: usize, max_words: usize },
    Reverse { min_words: usize, max_words: usize },
    Translate { pair: LangPair, min_words: usize, max_words: usize },
    Parse,
    ImageClassify,
    ImageCaption,
    AudioClassify,
}

/// A named task: modalities, command token and generator parameters.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    /// Row of the model's command-embedding table; also the reserved
    /// command id offset in the shared vocabulary.
    pub command: usize,
    pub kind: TaskKind,
    /// Number of distinct training samples (train indices are
    /// `0..train_budget`, cycled).
    pub train_budget: usize,
}

impl TaskSpec {
    pub fn input_modality(&self) -> Modality {
        match self.kind {
            TaskKind::Copy { .. } | TaskKind::Reverse { .. } | TaskKind::Translate { .. } => {
                Modality::Language
            }
            TaskKind::Parse => Modality::Language,
            TaskKind::ImageClassify | TaskKind::ImageCaption => Modality::Image,
            TaskKind::AudioClassify => Modality::Audio,
        }
    }

    pub fn output_modality(&self) -> Modality {
        match self.kind {
            TaskKind::ImageClassify | TaskKind::AudioClassify => Modality::Categorical,
            _ => Modality::Language,
        }
    }
}

/// Dev indices start here; train indices never reach this.
pub const DEV_BASE: usize = 10_000_000;
/// Samples in one length group share their drawn sequence length, so a
/// batch drawn from an aligned range needs no input padding.
pub const LENGTH_GROUP: usize = 16;

pub const IMAGE_SIZE: usize = 32;
pub const AUDIO_LEN: usize = 256;
pub const N_CLASSES: usize = 4;

#[derive(Debug, Clone)]
pub enum SampleInput {
    Text(String),
    /// `[H, W, 3]`
    Image(Tensor),
    /// `[T, 1]`
    Audio(Tensor),
}

#[derive(Debug, Clone)]
pub enum SampleTarget {
    Text(String),
    Class(usize),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub input: SampleInput,
    pub target: SampleTarget,
    /// Short human-readable line for data export.
    pub describe: String,
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn content_rng(task: &TaskSpec, seed: u64, index: usize) -> RngStream {
    RngStream::new(seed)
        .derive(fnv1a(&task.name))
        .derive(0x5EED_0001)
        .derive(index as u64)
}

fn group_rng(task: &TaskSpec, seed: u64, index: usize) -> RngStream {
    RngStream::new(seed)
        .derive(fnv1a(&task.name))
        .derive(0x5EED_0002)
        .derive((index / LENGTH_GROUP) as u64)
}

/// The three toy word inventories; translation pairs map between them
/// index-wise, so every mapping is exactly invertible.
pub fn lang_words(which: char) -> Vec<String> {
    let cons = match which {
        'a' => 'k',
        'b' => 'm',
        'c' => 's',
        _ => panic!("unknown language {which}"),
    };
    let vowels = ['a', 'e', 'i', 'o', 'u'];
    let mut out = Vec::with_capacity(20);
    'outer: for v1 in vowels {
        for v2 in vowels {
            out.push(format!("{cons}{v1}{cons}{v2}"));
            if out.len() == 20 {
                break 'outer;
            }
        }
    }
    out
}

/// Word-for-word mapping table of a translation pair, in source order.
pub fn translation_table(pair: LangPair) -> Vec<(String, String)> {
    let (src, dst) = match pair {
        LangPair::Ab => ('a', 'b'),
        LangPair::Ba => ('b', 'a'),
        LangPair::Ac => ('a', 'c'),
        LangPair::Ca => ('c', 'a'),
    };
    lang_words(src).into_iter().zip(lang_words(dst)).collect()
}

fn apply_mapping(words: &[String], table: &[(String, String)]) -> Vec<String> {
    words
        .iter()
        .map(|w| {
            table
                .iter()
                .find(|(s, _)| s == w)
                .map(|(_, d)| d.clone())
                .expect("word outside mapping table")
        })
        .collect()
}

const DETS: [&str; 2] = ["da", "du"];
const ADJS: [&str; 3] = ["gra", "ble", "swi"];
const NOUNS: [&str; 4] = ["fop", "lem", "nok", "rit"];
const VERBS: [&str; 3] = ["zam", "ped", "kul"];

const CAPTION_PATTERNS: [&str; 4] = ["solid", "hstripes", "vstripes", "checker"];
const CAPTION_SHADES: [&str; 2] = ["dark", "bright"];

/// Generates the sample at `(seed, index)`; bit-identical on every call.
///
/// Dev indices (`>= DEV_BASE`) of text-input tasks are rejection-sampled
/// against the task's full train split, so a dev input never equals any
/// train input even on the small discrete spaces (parse).
pub fn sample(task: &TaskSpec, seed: u64, index: usize) -> Sample {
    let text_input = matches!(
        task.kind,
        TaskKind::Copy { .. } | TaskKind::Reverse { .. } | TaskKind::Translate { .. } | TaskKind::Parse
    );
    if index >= DEV_BASE && text_input {
        let train = train_input_set(task, seed);
        let mut last = None;
        for attempt in 0..64u64 {
            let s = sample_attempt(task, seed, index, attempt);
            let key = match &s.input {
                SampleInput::Text(t) => t.clone(),
                _ => unreachable!(),
            };
            if !train.contains(&key) {
                return s;
            }
            last = Some(s);
        }
        return last.expect("at least one attempt ran");
    }
    sample_attempt(task, seed, index, 0)
}

/// Train inputs of `task` under `seed`, memoized per (task, seed, budget).
fn train_input_set(task: &TaskSpec, seed: u64) -> Arc<HashSet<String>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64, usize), Arc<HashSet<String>>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (fnv1a(&task.name), seed, task.train_budget);
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Arc::clone(hit);
    }
    let mut set = HashSet::with_capacity(task.train_budget);
    for i in 0..task.train_budget {
        if let SampleInput::Text(t) = sample_attempt(task, seed, i, 0).input {
            set.insert(t);
        }
    }
    let set = Arc::new(set);
    cache.lock().unwrap().insert(key, Arc::clone(&set));
    set
}

fn sample_attempt(task: &TaskSpec, seed: u64, index: usize, attempt: u64) -> Sample {
    let mut rng = content_rng(task, seed, index);
    if attempt > 0 {
        rng = rng.derive(attempt);
    }
    match &task.kind {
        TaskKind::Copy { min_words, max_words } => {
            let words = draw_words(task, seed, index, &mut rng, *min_words, *max_words);
            let text = words.join(" ");
            Sample {
                input: SampleInput::Text(text.clone()),
                target: SampleTarget::Text(text.clone()),
                describe: text,
            }
        }
        TaskKind::Reverse { min_words, max_words } => {
            let words = draw_words(task, seed, index, &mut rng, *min_words, *max_words);
            let mut rev = words.clone();
            rev.reverse();
            Sample {
                input: SampleInput::Text(words.join(" ")),
                target: SampleTarget::Text(rev.join(" ")),
                describe: words.join(" "),
            }
        }
        TaskKind::Translate { pair, min_words, max_words } => {
            let table = translation_table(*pair);
            let src_words = lang_words(match pair {
                LangPair::Ab | LangPair::Ac => 'a',
                LangPair::Ba => 'b',
                LangPair::Ca => 'c',
            });
            let len = draw_len(task, seed, index, *min_words, *max_words);
            let words: Vec<String> = (0..len)
                .map(|_| src_words[rng.next_below(src_words.len())].clone())
                .collect();
            let mapped = apply_mapping(&words, &table);
            Sample {
                input: SampleInput::Text(words.join(" ")),
                target: SampleTarget::Text(mapped.join(" ")),
                describe: words.join(" "),
            }
        }
        TaskKind::Parse => {
            let (input, tree) = gen_parse(&mut rng);
            Sample {
                input: SampleInput::Text(input.clone()),
                target: SampleTarget::Text(tree),
                describe: input,
            }
        }
        TaskKind::ImageClassify => {
            let label = rng.next_below(N_CLASSES);
            let img = render_quadrant_image(label, &mut rng);
            Sample {
                input: SampleInput::Image(img),
                target: SampleTarget::Class(label),
                describe: format!("bright-quadrant={label}"),
            }
        }
        TaskKind::ImageCaption => {
            let pattern = rng.next_below(CAPTION_PATTERNS.len());
            let shade = rng.next_below(CAPTION_SHADES.len());
            let img = render_pattern_image(pattern, shade, &mut rng);
            let caption = format!("{} {}", CAPTION_SHADES[shade], CAPTION_PATTERNS[pattern]);
            Sample {
                input: SampleInput::Image(img),
                target: SampleTarget::Text(caption.clone()),
                describe: caption,
            }
        }
        TaskKind::AudioClassify => {
            let label = rng.next_below(N_CLASSES);
            let wave = render_sine(label, &mut rng);
            Sample {
                input: SampleInput::Audio(wave),
                target: SampleTarget::Class(label),
                describe: format!("freq-bucket={label}"),
            }
        }
    }
}

fn draw_len(task: &TaskSpec, seed: u64, index: usize, min: usize, max: usize) -> usize {
    let mut g = group_rng(task, seed, index);
    min + g.next_below(max - min + 1)
}

fn draw_words(
    task: &TaskSpec,
    seed: u64,
    index: usize,
    rng: &mut RngStream,
    min: usize,
    max: usize,
) -> Vec<String> {
    let inventory = lang_words('a');
    let len = draw_len(task, seed, index, min, max);
    (0..len)
        .map(|_| inventory[rng.next_below(inventory.len())].clone())
        .collect()
}

/// Grammar: S -> NP VP; NP -> det noun | det adj noun; VP -> verb | verb NP.
/// Word classes are disjoint, so the flat sentence determines its tree.
fn gen_parse(rng: &mut RngStream) -> (String, String) {
    fn gen_np(rng: &mut RngStream, words: &mut Vec<String>) -> String {
        let det = DETS[rng.next_below(DETS.len())];
        let with_adj = rng.next_uniform() < 0.4;
        let noun = NOUNS[rng.next_below(NOUNS.len())];
        if with_adj {
            let adj = ADJS[rng.next_below(ADJS.len())];
            words.extend([det.to_string(), adj.to_string(), noun.to_string()]);
            format!("( NP {det} {adj} {noun} )")
        } else {
            words.extend([det.to_string(), noun.to_string()]);
            format!("( NP {det} {noun} )")
        }
    }
    let mut words = Vec::new();
    let np = gen_np(rng, &mut words);
    let verb = VERBS[rng.next_below(VERBS.len())];
    words.push(verb.to_string());
    let with_obj = rng.next_uniform() < 0.6;
    let vp = if with_obj {
        let obj = gen_np(rng, &mut words);
        format!("( VP {verb} {obj} )")
    } else {
        format!("( VP {verb} )")
    };
    (words.join(" "), format!("( S {np} {vp} )"))
}

fn render_quadrant_image(label: usize, rng: &mut RngStream) -> Tensor {
    let n = IMAGE_SIZE;
    let half = n / 2;
    let mut data = vec![0.0; n * n * 3];
    for r in 0..n {
        for c in 0..n {
            let q = usize::from(r >= half) * 2 + usize::from(c >= half);
            let boost = if q == label { 0.7 + rng.next_range(0.0, 0.1) } else { 0.0 };
            for ch in 0..3 {
                data[(r * n + c) * 3 + ch] = rng.next_range(0.0, 0.2) + boost;
            }
        }
    }
    Tensor::new(&[n, n, 3], data).expect("image data is finite")
}

fn render_pattern_image(pattern: usize, shade: usize, rng: &mut RngStream) -> Tensor {
    let n = IMAGE_SIZE;
    let hi = if shade == 1 { 0.9 } else { 0.45 };
    let lo = 0.05;
    let mut data = vec![0.0; n * n * 3];
    for r in 0..n {
        for c in 0..n {
            let on = match pattern {
                0 => true,                        // solid
                1 => (r / 4) % 2 == 0,            // horizontal stripes
                2 => (c / 4) % 2 == 0,            // vertical stripes
                _ => ((r / 8) + (c / 8)) % 2 == 0, // checker
            };
            let base = if on { hi } else { lo };
            for ch in 0..3 {
                data[(r * n + c) * 3 + ch] = base + rng.next_range(0.0, 0.05);
            }
        }
    }
    Tensor::new(&[n, n, 3], data).expect("image data is finite")
}

/// Pure sine with the frequency drawn from one of four disjoint bands
/// (cycles per window): [3,5), [7,11), [14,22), [30,46).
fn render_sine(label: usize, rng: &mut RngStream) -> Tensor {
    let bands: [(f64, f64); N_CLASSES] = [(3.0, 5.0), (7.0, 11.0), (14.0, 22.0), (30.0, 46.0)];
    let (lo, hi) = bands[label];
    let freq = rng.next_range(lo, hi);
    let amp = rng.next_range(0.6, 1.0);
    let phase = rng.next_range(0.0, 1.0);
    let t = AUDIO_LEN;
    let data: Vec<f64> = (0..t)
        .map(|i| amp * (std::f64::consts::TAU * (freq * i as f64 / t as f64 + phase)).sin())
        .collect();
    Tensor::new(&[t, 1], data).expect("waveform is finite")
}

/// The standard desk roster: 8 task analogs plus the copy and reverse
/// diagnostics. Command ids are positions in this list.
pub fn desk_tasks() -> Vec<TaskSpec> {
    desk_tasks_with(2048, 2048)
}

/// Same roster with explicit text-task and parse budgets (the experiment
/// battery shrinks the parse budget for its low-data condition).
pub fn desk_tasks_with(text_budget: usize, parse_budget: usize) -> Vec<TaskSpec> {
    let text = |name: &str, kind: TaskKind, command: usize| TaskSpec {
        name: name.to_string(),
        command,
        kind,
        train_budget: text_budget,
    };
    let mut tasks = vec![
        text("copy", TaskKind::Copy { min_words: 4, max_words: 9 }, 0),
        text("rev", TaskKind::Reverse { min_words: 4, max_words: 9 }, 1),
        text(
            "tr-ab",
            TaskKind::Translate { pair: LangPair::Ab, min_words: 4, max_words: 9 },
            2,
        ),
        text(
            "tr-ba",
            TaskKind::Translate { pair: LangPair::Ba, min_words: 4, max_words: 9 },
            3,
        ),
        text(
            "tr-ac",
            TaskKind::Translate { pair: LangPair::Ac, min_words: 4, max_words: 9 },
            4,
        ),
        text(
            "tr-ca",
            TaskKind::Translate { pair: LangPair::Ca, min_words: 4, max_words: 9 },
            5,
        ),
    ];
    tasks.push(TaskSpec {
        name: "parse".into(),
        command: 6,
        kind: TaskKind::Parse,
        train_budget: parse_budget,
    });
    tasks.push(TaskSpec {
        name: "img4".into(),
        command: 7,
        kind: TaskKind::ImageClassify,
        train_budget: text_budget,
    });
    tasks.push(TaskSpec {
        name: "imgcap".into(),
        command: 8,
        kind: TaskKind::ImageCaption,
        train_budget: text_budget,
    });
    tasks.push(TaskSpec {
        name: "audio4".into(),
        command: 9,
        kind: TaskKind::AudioClassify,
        train_budget: text_budget,
    });
    tasks
}

pub fn find_task<'a>(tasks: &'a [TaskSpec], name: &str) -> Result<&'a TaskSpec> {
    tasks
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| DataError::UnknownTask(name.to_string()))
}

pub fn command_names(tasks: &[TaskSpec]) -> Vec<String> {
    tasks.iter().map(|t| t.name.clone()).collect()
}

/// Text corpus for vocabulary learning: inputs and targets of every
/// language-sided task over a fixed slice of the training range.
pub fn vocab_corpus(tasks: &[TaskSpec], seed: u64, per_task: usize) -> String {
    let mut corpus = String::new();
    for task in tasks {
        if task.input_modality() != Modality::Language
            && task.output_modality() != Modality::Language
        {
            continue;
        }
        for i in 0..per_task.min(task.train_budget) {
            let s = sample(task, seed, i);
            if let SampleInput::Text(t) = &s.input {
                corpus.push_str(t);
                corpus.push('\n');
            }
            if let SampleTarget::Text(t) = &s.target {
                corpus.push_str(t);
                corpus.push('\n');
            }
        }
    }
    corpus
}

/// `input<TAB>target` export lines; non-text inputs export their
/// describe string.
pub fn export_tsv(task: &TaskSpec, seed: u64, start: usize, count: usize) -> String {
    let mut out = String::new();
    for i in start..start + count {
        let s = sample(task, seed, i);
        let input = match &s.input {
            SampleInput::Text(t) => t.clone(),
            _ => s.describe.clone(),
        };
        let target = match &s.target {
            SampleTarget::Text(t) => t.clone(),
            SampleTarget::Class(c) => c.to_string(),
        };
        out.push_str(&input);
        out.push('\t');
        out.push_str(&target);
        out.push('\n');
    }
    out
}
